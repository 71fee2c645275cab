"""Clinician-driven autonomous model tuning harness.

Turns a free-text clinical request into a validated task spec, builds a
runnable workspace over a held-out-safe data manifest, tunes it with a
greedy accept/reject loop under metric guards, and spends the task's single
test-split evaluation only on explicit demand.
"""

from .errors import IntentLoopError
from .loop import (
    Ledger,
    LedgerEntry,
    LoopConfig,
    LoopResult,
    better,
    check_guards,
    evaluate_test_once,
    replay_state,
    run_loop,
)
from .service import TaskService, TuneParams
from .stats import BootstrapConfig, ConfidenceInterval, format_ci
from .task_model import TaskSpec, parse_request, validate_spec
from .workspace import Workspace, initialize_workspace

__version__ = "0.1.0"

__all__ = [
    "BootstrapConfig",
    "ConfidenceInterval",
    "IntentLoopError",
    "Ledger",
    "LedgerEntry",
    "LoopConfig",
    "LoopResult",
    "TaskService",
    "TaskSpec",
    "TuneParams",
    "Workspace",
    "better",
    "check_guards",
    "evaluate_test_once",
    "format_ci",
    "initialize_workspace",
    "parse_request",
    "replay_state",
    "run_loop",
    "validate_spec",
    "__version__",
]
