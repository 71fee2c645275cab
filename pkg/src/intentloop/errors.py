"""Exception types shared across the package.

Every domain error carries a stable ``code`` string. CLI commands print it in
their one-line diagnostics and the HTTP layer returns it in error bodies, so
the same identifier is visible no matter which surface raised it.
"""

from __future__ import annotations


class IntentLoopError(Exception):
    """Base class for all expected failure modes."""

    code = "internal_error"


# --- agent provider / gateway ---------------------------------------------

class ProviderUnavailable(IntentLoopError):
    """The agent provider could not produce a response.

    ``transient`` marks transport-level failures worth retrying; scripted
    providers raise with ``transient=False`` when the exchange is simply not
    in their table.
    """

    code = "provider_unavailable"

    def __init__(self, message: str = "", *, transient: bool = False):
        super().__init__(message)
        self.transient = transient


class ResponseTooLarge(IntentLoopError):
    code = "response_too_large"


class UnparseableResponse(IntentLoopError):
    code = "unparseable_response"


# --- request parsing and task specs ----------------------------------------

class UnrecognizedRequest(IntentLoopError):
    code = "unrecognized_request"


class SpecInvalid(IntentLoopError):
    code = "spec_invalid"

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(f"{v.field}: {v.rule}" for v in self.violations)
        super().__init__(f"task spec failed validation ({detail})")


class SpecNotConfirmed(IntentLoopError):
    code = "spec_not_confirmed"


# --- workspace --------------------------------------------------------------

class ScaffoldInvalid(IntentLoopError):
    code = "scaffold_invalid"


class PathEscape(IntentLoopError):
    code = "path_escape"


class PatchConflict(IntentLoopError):
    code = "patch_conflict"


class UnknownVersion(IntentLoopError):
    code = "unknown_version"


# --- tuning loop -------------------------------------------------------------

class MetricMismatch(IntentLoopError):
    code = "metric_mismatch"


class GuardMetricMissing(IntentLoopError):
    code = "guard_metric_missing"


class TestAlreadyConsumed(IntentLoopError):
    code = "test_already_consumed"


class NoCompletedRun(IntentLoopError):
    code = "no_completed_run"


# --- metrics ------------------------------------------------------------------

class MetricUndefined(IntentLoopError):
    """A metric that is undefined on the given data.

    Subclasses mark the specific reason; bootstrap resampling treats the whole
    family as "redraw this replicate".
    """

    code = "metric_undefined"


class SingleClassInput(MetricUndefined):
    code = "single_class_input"


class MissingClass(MetricUndefined):
    code = "missing_class"


class DegenerateBox(IntentLoopError):
    code = "degenerate_box"


class NoGroundTruth(MetricUndefined):
    code = "no_ground_truth"


class ZeroVariance(MetricUndefined):
    code = "zero_variance"


class ZeroResidualVariance(MetricUndefined):
    code = "zero_residual_variance"


class NoFalsePositives(MetricUndefined):
    code = "no_false_positives"


# --- statistics ----------------------------------------------------------------

class MetricUndefinedOnData(IntentLoopError):
    code = "metric_undefined_on_data"


class RedrawCapExceeded(IntentLoopError):
    code = "redraw_cap_exceeded"


class CaseMismatch(IntentLoopError):
    code = "case_mismatch"


class LengthMismatch(IntentLoopError):
    code = "length_mismatch"


# --- simulation -----------------------------------------------------------------

class InvalidTarget(IntentLoopError):
    code = "invalid_target"


# --- service ----------------------------------------------------------------------

class UnknownTask(IntentLoopError):
    code = "unknown_task"


class GateError(IntentLoopError):
    """A lifecycle-order violation: the operation is valid, just not yet."""

    code = "gate_error"


class AlreadyTuning(GateError):
    code = "already_tuning"


class UnknownDecision(IntentLoopError):
    code = "unknown_decision"
