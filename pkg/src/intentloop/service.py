"""Task lifecycle orchestration shared by the CLI and the HTTP API.

One service instance owns a home directory of tasks::

    <home>/tasks/<task_id>/
        task.json       status, original request, confirmed spec
        workspace/      versioned working tree and run evidence
        ledger/         decision ledger, adjudications, test gate
        report.json     held-out evaluation report, once produced

Both entry surfaces call the same methods here, so behavior cannot drift
between them. Statuses move parsed -> confirmed -> initialized -> tuning
(bouncing through awaiting_decision when a guard parks a run) -> tuned ->
tested; anything off-order raises GateError and nothing is mutated.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AlreadyTuning,
    GateError,
    IntentLoopError,
    SpecNotConfirmed,
    UnknownTask,
    UnrecognizedRequest,
)
from .gateway import AgentGateway, AuditLog, HttpChatProvider, MockProvider
from .loop import (
    BootstrapConfig,
    Ledger,
    LoopConfig,
    evaluate_test_once,
    replay_state,
    run_loop,
)
from .task_model import (
    ClinicianRequest,
    parse_request,
    parse_request_rules,
    require_valid,
    spec_from_dict,
    spec_to_dict,
)
from .workspace import Workspace, initialize_workspace

STATUSES = ("parsed", "confirmed", "initialized", "tuning",
            "awaiting_decision", "tuned", "tested", "error")


def default_gateway_factory(service: "TaskService", task_id: str) -> AgentGateway:
    """Scripted provider when INTENTLOOP_SCRIPT points at a response file,
    otherwise the HTTP chat provider configured via AGENT_API_* variables."""
    audit = AuditLog(service.task_dir(task_id) / "agent_audit.ndjson")
    script = os.environ.get("INTENTLOOP_SCRIPT")
    if script:
        provider = MockProvider.from_file(Path(script))
    else:
        provider = HttpChatProvider()
    return AgentGateway(provider, audit=audit)


@dataclass
class TuneParams:
    total_runs: int
    run_budget_seconds: float = 60.0
    grace_seconds: float = 10.0
    mode: str = "batch"


class TaskService:
    def __init__(self, home: Path, gateway_factory=None, parser: str = "auto"):
        """``parser`` picks how requests become specs: "rules" is the
        deterministic built-in grammar, "agent" asks the semantic-parser
        agent, and "auto" uses the agent exactly when one is configured
        (an injected factory, INTENTLOOP_SCRIPT, or AGENT_API_URL)."""
        self.home = Path(home)
        (self.home / "tasks").mkdir(parents=True, exist_ok=True)
        self._gateway_factory = gateway_factory or default_gateway_factory
        if parser == "auto":
            agent_configured = (gateway_factory is not None
                                or os.environ.get("INTENTLOOP_SCRIPT")
                                or os.environ.get("AGENT_API_URL"))
            parser = "agent" if agent_configured else "rules"
        self.parser = parser
        self._lock = threading.Lock()
        self._tune_threads: dict[str, threading.Thread] = {}

    # -- paths and persistence -------------------------------------------------

    def task_dir(self, task_id: str) -> Path:
        return self.home / "tasks" / task_id

    def _task_file(self, task_id: str) -> Path:
        return self.task_dir(task_id) / "task.json"

    def _load(self, task_id: str) -> dict:
        path = self._task_file(task_id)
        if not path.exists():
            raise UnknownTask(f"no task {task_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def _store(self, record: dict) -> None:
        path = self._task_file(record["task_id"])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")

    def _set_status(self, task_id: str, status: str,
                    error: str | None = None) -> None:
        with self._lock:
            record = self._load(task_id)
            record["status"] = status
            record["error"] = error
            self._store(record)

    def ledger(self, task_id: str) -> Ledger:
        return Ledger(self.task_dir(task_id) / "ledger")

    def _workspace(self, task_id: str) -> Workspace:
        ws_dir = self.task_dir(task_id) / "workspace"
        if not (ws_dir / "workspace.json").exists():
            raise GateError(f"task {task_id!r} has no initialized workspace")
        return Workspace.open(ws_dir)

    def _spec(self, record: dict):
        if not record.get("spec"):
            raise GateError(f"task {record['task_id']!r} has no spec")
        return spec_from_dict(record["spec"])

    # -- lifecycle ---------------------------------------------------------------

    def create_task(self, request_text: str) -> dict:
        """Parse a free-text request into a draft task spec."""
        if not request_text or not request_text.strip():
            raise UnrecognizedRequest("request text is empty")
        task_id = f"task_{uuid.uuid4().hex[:10]}"
        self.task_dir(task_id).mkdir(parents=True, exist_ok=True)
        request = ClinicianRequest.new(request_text)
        if self.parser == "agent":
            spec = parse_request(request, self._gateway_factory(self, task_id))
        else:
            spec = parse_request_rules(request)
        record = {"task_id": task_id, "status": "parsed",
                  "request": request_text, "request_id": request.request_id,
                  "spec": spec_to_dict(spec), "error": None, "tune": None}
        self._store(record)
        return self.describe(task_id)

    def describe(self, task_id: str) -> dict:
        record = self._load(task_id)
        out = {"task_id": task_id, "status": record["status"],
               "request": record["request"], "spec": record.get("spec"),
               "error": record.get("error")}
        ledger = self.ledger(task_id)
        entries = ledger.entries()
        if entries:
            state = replay_state(entries)
            out["runs_used"] = state.runs_used
            out["running_best"] = state.running_best
            out["pending_entry_id"] = (state.pending or {}).get("entry_id")
        out["test_consumed"] = ledger.read_gate().get("consumed", False)
        return out

    def list_tasks(self) -> list[dict]:
        tasks_dir = self.home / "tasks"
        out = []
        for child in sorted(tasks_dir.iterdir()):
            if (child / "task.json").exists():
                out.append(self.describe(child.name))
        return out

    def confirm_spec(self, task_id: str, spec_updates: dict | None = None) -> dict:
        """Clinician sign-off, optionally amending the draft first."""
        record = self._load(task_id)
        if record["status"] not in ("parsed", "confirmed"):
            raise GateError(f"cannot confirm from status {record['status']!r}")
        spec_dict = dict(record["spec"] or {})
        if spec_updates:
            spec_dict.update(spec_updates)
        spec = spec_from_dict(spec_dict)
        require_valid(spec)
        record["spec"] = spec_to_dict(spec)
        record["status"] = "confirmed"
        self._store(record)
        return self.describe(task_id)

    def initialize(self, task_id: str, seed: int = 0, mode: str = "mock",
                   sim_overrides: dict | None = None,
                   n_train: int = 600, n_val: int = 400,
                   n_test: int = 400) -> dict:
        record = self._load(task_id)
        if record["status"] != "confirmed":
            raise SpecNotConfirmed(
                f"initialize requires a confirmed spec, status is "
                f"{record['status']!r}")
        spec = self._spec(record)
        gateway = None
        if mode == "agent":
            gateway = self._gateway_factory(self, task_id)
        ws, manifest = initialize_workspace(
            spec, self.task_dir(task_id) / "workspace", seed=seed, mode=mode,
            gateway=gateway, task_id=task_id, sim_overrides=sim_overrides,
            n_train=n_train, n_val=n_val, n_test=n_test)
        spec = spec.with_manifest(manifest)
        record["spec"] = spec_to_dict(spec)
        record["status"] = "initialized"
        self._store(record)
        return self.describe(task_id)

    # -- tuning -------------------------------------------------------------------

    def start_tuning(self, task_id: str, params: TuneParams,
                     wait: bool = False) -> dict:
        record = self._load(task_id)
        if record["status"] not in ("initialized", "tuned", "tuning",
                                    "awaiting_decision"):
            raise GateError(f"cannot tune from status {record['status']!r}")
        with self._lock:
            thread = self._tune_threads.get(task_id)
            if thread is not None and thread.is_alive():
                raise AlreadyTuning(f"task {task_id!r} is already tuning")
        record["tune"] = {"total_runs": params.total_runs,
                          "run_budget_seconds": params.run_budget_seconds,
                          "grace_seconds": params.grace_seconds,
                          "mode": params.mode}
        self._store(record)
        if wait:
            self._tune(task_id, params)
        else:
            thread = threading.Thread(target=self._tune,
                                      args=(task_id, params), daemon=True,
                                      name=f"tune-{task_id}")
            with self._lock:
                self._tune_threads[task_id] = thread
            thread.start()
        return self.describe(task_id)

    def _tune(self, task_id: str, params: TuneParams) -> None:
        try:
            record = self._load(task_id)
            spec = self._spec(record)
            ws = self._workspace(task_id)
            ledger = self.ledger(task_id)
            gateway = self._gateway_factory(self, task_id)
            cfg = LoopConfig(total_runs=params.total_runs,
                             run_budget_seconds=params.run_budget_seconds,
                             grace_seconds=params.grace_seconds,
                             mode=params.mode)

            def on_state(status: str, payload: dict) -> None:
                if status in ("tuning", "awaiting_decision"):
                    self._set_status(task_id, status)

            self._set_status(task_id, "tuning")
            run_loop(spec, ws, gateway, cfg, ledger, on_state=on_state)
            self._set_status(task_id, "tuned")
        except IntentLoopError as exc:
            self._set_status(task_id, "error", error=f"{exc.code}: {exc}")
        except Exception as exc:  # keep the thread from dying silently
            self._set_status(task_id, "error", error=f"internal: {exc!r}")

    def submit_decision(self, task_id: str, entry_id: str, choice: str,
                        by: str = "clinician") -> dict:
        ledger = self.ledger(task_id)
        state = replay_state(ledger.entries())
        if state.pending is None or state.pending["entry_id"] != entry_id:
            raise GateError(f"no pending adjudication named {entry_id!r}")
        ledger.append_clinician_decision(entry_id, choice, by=by)
        return {"entry_id": entry_id, "choice": choice, "by": by}

    def pending_entry(self, task_id: str) -> dict | None:
        self._load(task_id)  # 404 on unknown ids
        return replay_state(self.ledger(task_id).entries()).pending

    def ledger_entries(self, task_id: str, after: int = 0,
                       wait_seconds: float = 0.0) -> dict:
        """Entries past ``after``; long-polls up to 30s when asked to wait."""
        self._load(task_id)
        ledger = self.ledger(task_id)
        deadline = time.monotonic() + min(float(wait_seconds), 30.0)
        while True:
            entries = ledger.entries()
            if len(entries) > after or time.monotonic() >= deadline:
                return {"entries": entries[after:], "next_after": len(entries)}
            time.sleep(0.25)

    def wait_for_tuning(self, task_id: str, timeout: float = 600.0) -> dict:
        thread = self._tune_threads.get(task_id)
        if thread is not None:
            thread.join(timeout)
        return self.describe(task_id)

    # -- held-out evaluation ---------------------------------------------------------

    def run_test(self, task_id: str, budget_seconds: float = 120.0,
                 bootstrap: BootstrapConfig | None = None) -> dict:
        record = self._load(task_id)
        # "tested" passes through so the one-shot gate itself reports reuse.
        if record["status"] not in ("tuned", "initialized", "tested"):
            raise GateError(
                f"test evaluation requires a tuned task, status is "
                f"{record['status']!r}")
        spec = self._spec(record)
        ws = self._workspace(task_id)
        ledger = self.ledger(task_id)
        report = evaluate_test_once(spec, ws, ledger,
                                    test_budget_seconds=budget_seconds,
                                    bootstrap=bootstrap)
        (self.task_dir(task_id) / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        self._set_status(task_id, "tested")
        return report

    def report(self, task_id: str) -> dict:
        self._load(task_id)
        path = self.task_dir(task_id) / "report.json"
        if not path.exists():
            raise GateError(f"task {task_id!r} has no test report yet")
        return json.loads(path.read_text(encoding="utf-8"))
