"""Greedy tuning loop with an append-only decision ledger.

The loop runs the working tree once to establish a baseline, then alternates
propose / execute / adjudicate until the run budget is spent. A proposal is
kept only when its best validation value of the primary metric strictly
improves on the last kept run; ties, regressions, and crashes all roll the
tree back, and crashes still consume budget. Metric guards compare every
otherwise-acceptable candidate against the last kept run's secondary
metrics; a tolerance breach either rejects outright or parks the decision
for a human, per the guard's configured action.

Ledger invariants the rest of the system leans on:

* append-only, one JSON object per line, never rewritten;
* no wall-clock fields, so identical scripted runs produce byte-identical
  ledgers;
* ``running_best`` never moves in the wrong direction;
* a parked decision is resolved by appending a second entry with the same
  run index, never by editing the first.

The test split is guarded separately: ``evaluate_test_once`` consumes a
persistent one-shot gate before any child sees the unsealed test list, so a
second attempt fails even across process restarts, and a crash mid-
evaluation still burns the attempt.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .artifacts import load_artifact_set
from .confound import ConfoundInput, confound_report, render_confound_text
from .errors import (
    GateError,
    NoCompletedRun,
    IntentLoopError,
    TestAlreadyConsumed,
    UnknownDecision,
)
from .gateway import AgentGateway, AgentRole, propose_modification
from .metrics.registry import (
    BINARY,
    compute_metric,
    metric_direction,
    parse_metric_id,
    select_operating_context,
)
from .stats import (
    BootstrapConfig,
    bootstrap_ci,
    format_ci,
    paired_bootstrap_test,
)
from .task_model import TaskSpec, spec_to_json
from .workspace import RunOutcome, Workspace

DECISIONS = ("initial", "accepted", "rejected_worse", "rejected_crash",
             "rejected_guard", "pending_clinician")


@dataclass(frozen=True)
class LoopConfig:
    """Budget and cadence of one tuning session.

    ``total_runs`` counts every child execution including the baseline run
    and crashed attempts; it is the hard budget T.
    """

    total_runs: int
    run_budget_seconds: float = 60.0
    grace_seconds: float = 10.0
    mode: str = "batch"  # "batch" | "interactive"
    poll_seconds: float = 0.2
    decision_timeout_seconds: float | None = None


@dataclass(frozen=True)
class GuardCheck:
    metric: str
    max_degradation: float
    action: str
    baseline: float | None
    candidate: float | None
    violated: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LedgerEntry:
    """One adjudicated run, or the resolution of a parked one.

    Deliberately carries no timestamps or durations: those live in the run
    logs. Keeping the ledger purely decision-shaped makes scripted sessions
    reproducible byte for byte.
    """

    entry_id: str
    run_index: int
    decision: str
    primary_metric: str
    proposal_summary: str = ""
    proposal_rationale: str = ""
    workspace_version: int = 0
    status: str = "completed"
    candidate_value: float | None = None
    incumbent_value: float | None = None
    running_best: float | None = None
    val_metrics: dict = field(default_factory=dict)
    operating_point: dict = field(default_factory=dict)
    guard_checks: list = field(default_factory=list)
    malformed_lines: int = 0
    exit_code: int | None = None
    timed_out: bool = False
    resolution_of: str | None = None
    resolved_by: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class Ledger:
    """NDJSON decision log plus its two sidecars.

    ``decisions.ndjson`` carries human adjudications appended by the service
    or CLI; ``test_gate.json`` is the one-shot test-split gate. All three
    survive process restarts.
    """

    def __init__(self, directory: Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    @property
    def ledger_path(self) -> Path:
        return self.dir / "ledger.ndjson"

    @property
    def decisions_path(self) -> Path:
        return self.dir / "decisions.ndjson"

    @property
    def gate_path(self) -> Path:
        return self.dir / "test_gate.json"

    def append(self, entry: LedgerEntry) -> None:
        with open(self.ledger_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")

    def entries(self) -> list[dict]:
        if not self.ledger_path.exists():
            return []
        out = []
        with open(self.ledger_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def append_clinician_decision(self, entry_id: str, choice: str,
                                  by: str = "clinician") -> None:
        if choice not in ("accept", "reject"):
            raise UnknownDecision(f"choice must be accept or reject, got {choice!r}")
        with open(self.decisions_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"entry_id": entry_id, "choice": choice,
                                 "by": by}, sort_keys=True) + "\n")

    def clinician_decisions(self) -> dict:
        if not self.decisions_path.exists():
            return {}
        out = {}
        with open(self.decisions_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    d = json.loads(line)
                    out.setdefault(d["entry_id"], d)  # first decision wins
        return out

    def read_gate(self) -> dict:
        if not self.gate_path.exists():
            return {"consumed": False}
        return json.loads(self.gate_path.read_text(encoding="utf-8"))

    def write_gate(self, payload: dict) -> None:
        self.gate_path.write_text(json.dumps(payload, sort_keys=True, indent=2)
                                  + "\n", encoding="utf-8")


# --- pure decision rules ------------------------------------------------------

def better(candidate: float | None, incumbent: float | None,
           direction: str = "maximize") -> bool:
    """Strict improvement only; ties and missing candidates lose."""
    if candidate is None:
        return False
    if incumbent is None:
        return True
    return candidate > incumbent if direction == "maximize" else candidate < incumbent


def check_guards(spec: TaskSpec, baseline_metrics: dict,
                 candidate_metrics: dict) -> list[GuardCheck]:
    """Compare a candidate's guarded metrics to the last kept run's.

    A guard with no baseline value passes (nothing to degrade from); a guard
    whose candidate value is missing while a baseline exists is violated,
    since compliance cannot be demonstrated.
    """
    checks = []
    for guard in spec.guards:
        base = baseline_metrics.get(guard.metric)
        cand = candidate_metrics.get(guard.metric)
        if base is None:
            violated = False
        elif cand is None:
            violated = True
        elif metric_direction(guard.metric) == "maximize":
            violated = (base - cand) > guard.max_degradation
        else:
            violated = (cand - base) > guard.max_degradation
        checks.append(GuardCheck(metric=guard.metric,
                                 max_degradation=guard.max_degradation,
                                 action=guard.on_violation,
                                 baseline=base, candidate=cand,
                                 violated=violated))
    return checks


def _declared_metric_ids(spec: TaskSpec) -> list[str]:
    ids = [spec.primary_metric.metric]
    for mid in spec.secondary_metrics:
        if mid not in ids:
            ids.append(mid)
    for g in spec.guards:
        if g.metric not in ids:
            ids.append(g.metric)
    return ids


def collect_split_metrics(spec: TaskSpec, artifacts_dir: Path | None,
                          split: str = "val", ctx=None) -> tuple[dict, dict]:
    """All declared metrics computable from a run's artifacts, plus the
    operating point used. Metrics undefined on the data are simply absent."""
    if artifacts_dir is None:
        return {}, {}
    art_set = load_artifact_set(Path(artifacts_dir), split)
    if art_set is None:
        return {}, {}
    if ctx is None:
        ctx = select_operating_context(spec.task_kind, art_set,
                                       classes=spec.classes)
    metrics = {}
    for mid in _declared_metric_ids(spec):
        try:
            metrics[mid] = float(compute_metric(mid, spec.task_kind, art_set, ctx))
        except IntentLoopError:
            continue
    op = {}
    if ctx.class_threshold is not None:
        op["class_threshold"] = float(ctx.class_threshold)
    if spec.task_kind == "detection":
        op["det_conf_threshold"] = float(ctx.det_conf_threshold)
    if ctx.per_class_thresholds:
        op["per_class_thresholds"] = {k: float(v) for k, v
                                      in ctx.per_class_thresholds.items()}
    return metrics, op


# --- replayable loop state ------------------------------------------------------

@dataclass
class LoopState:
    entries: list = field(default_factory=list)
    incumbent_value: float | None = None
    incumbent_version: int | None = None
    incumbent_metrics: dict = field(default_factory=dict)
    running_best: float | None = None
    pending: dict | None = None

    @property
    def runs_used(self) -> int:
        return len({e["run_index"] for e in self.entries})

    @property
    def next_run_index(self) -> int:
        if not self.entries:
            return 0
        return max(e["run_index"] for e in self.entries) + 1

    @property
    def proposals_consumed(self) -> int:
        return sum(1 for e in self.entries
                   if e["decision"] != "initial" and not e.get("resolution_of"))

    def absorb(self, entry: dict) -> None:
        self.entries.append(entry)
        d = entry["decision"]
        accepted = (d == "accepted"
                    or (d == "initial" and entry["status"] == "completed"))
        if accepted:
            self.incumbent_value = entry["candidate_value"]
            self.incumbent_version = entry["workspace_version"]
            self.incumbent_metrics = dict(entry.get("val_metrics") or {})
        if entry.get("resolution_of"):
            self.pending = None
        elif d == "pending_clinician":
            self.pending = entry
        self.running_best = entry.get("running_best", self.running_best)


def replay_state(entries: list[dict]) -> LoopState:
    state = LoopState()
    for e in entries:
        state.absorb(e)
    return state


@dataclass(frozen=True)
class LoopResult:
    runs_used: int
    running_best: float | None
    best_version: int | None
    reason: str


# --- the loop -------------------------------------------------------------------

def _notify(on_state, status: str, payload: dict) -> None:
    if on_state is not None:
        on_state(status, payload)


def _default_runner(ws: Workspace, cfg: LoopConfig, required_metric: str):
    def run(kind: str, run_index: int) -> RunOutcome:
        return ws.execute_run(kind, run_index, cfg.run_budget_seconds,
                              required_metric=required_metric,
                              grace_seconds=cfg.grace_seconds)
    return run


def _await_decision(ledger: Ledger, entry_id: str, cfg: LoopConfig,
                    on_state, payload: dict) -> tuple[str, str]:
    """Block until someone adjudicates a parked entry.

    Batch mode never waits: the configured default is to reject. Interactive
    mode polls the decision sidecar, which the service or CLI appends to.
    """
    if cfg.mode == "batch":
        return "reject", "batch_default"
    _notify(on_state, "awaiting_decision", payload)
    start = time.monotonic()
    while True:
        decision = ledger.clinician_decisions().get(entry_id)
        if decision is not None:
            choice = decision["choice"]
            if choice not in ("accept", "reject"):
                raise UnknownDecision(f"unusable adjudication {choice!r}")
            return choice, decision.get("by", "clinician")
        if (cfg.decision_timeout_seconds is not None
                and time.monotonic() - start > cfg.decision_timeout_seconds):
            return "reject", "timeout_default"
        time.sleep(cfg.poll_seconds)


def run_loop(spec: TaskSpec, ws: Workspace, gateway: AgentGateway,
             cfg: LoopConfig, ledger: Ledger, on_state=None,
             runner=None) -> LoopResult:
    """Drive tuning until the execution budget T is exhausted.

    Safe to call again after an interruption: prior ledger entries are
    replayed, the working tree is restored to the last kept version, any
    scripted provider is fast-forwarded past proposals already consumed, and
    an unresolved parked decision is waited on before new proposals flow.
    """
    primary_id = spec.primary_metric.metric
    base_name, _ = parse_metric_id(primary_id)
    direction = spec.primary_metric.direction
    spec_json = spec_to_json(spec)
    if runner is None:
        runner = _default_runner(ws, cfg, base_name)

    state = replay_state(ledger.entries())

    # Restart resync: the tree must match the last kept version, and a
    # scripted provider must not replay proposals the ledger already settled.
    if state.entries and state.incumbent_version is not None:
        recorded = next((h for h in ws.history
                         if h["version"] == state.incumbent_version), None)
        if recorded and ws.current_tree_hash() != recorded["tree_hash"]:
            ws.revert_to(state.incumbent_version, note="resume resync")
    if state.proposals_consumed:
        gateway.skip_scripted(state.proposals_consumed,
                              role=AgentRole.AUTONOMOUS_DEVELOPER)

    if not state.entries:
        _notify(on_state, "tuning", {"phase": "initial", "run_index": 0})
        outcome = runner("train_val", 0)
        version = ws.next_version - 1
        value = outcome.best_val(base_name, direction == "maximize")
        metrics, op = ({}, {})
        if outcome.status == "completed":
            metrics, op = collect_split_metrics(spec, outcome.artifacts_dir)
        entry = LedgerEntry(
            entry_id="dec_0000", run_index=0, decision="initial",
            primary_metric=primary_id, workspace_version=version,
            status=outcome.status,
            candidate_value=None if value is None else float(value),
            incumbent_value=None,
            running_best=None if value is None else float(value),
            val_metrics=metrics, operating_point=op,
            malformed_lines=outcome.malformed_lines,
            exit_code=outcome.exit_code, timed_out=outcome.timed_out)
        ledger.append(entry)
        state.absorb(entry.to_dict())
        if outcome.status != "completed":
            raise NoCompletedRun("baseline run produced no valid val record")

    if state.pending is not None:
        choice, by = _await_decision(
            ledger, state.pending["entry_id"], cfg, on_state,
            {"entry": state.pending})
        _resolve_pending(spec, ws, ledger, state, choice, by)

    while state.runs_used < cfg.total_runs:
        _notify(on_state, "tuning", {"phase": "proposing",
                                     "runs_used": state.runs_used})
        expected_hash = ws.current_tree_hash()
        proposal = propose_modification(gateway, spec_json,
                                        ledger_table(state.entries))
        ws.apply_patch(proposal.edits, proposal.config_updates,
                       note=f"proposal: {proposal.summary[:60]}",
                       expected_tree_hash=expected_hash)
        run_index = state.next_run_index
        version = ws.next_version - 1
        _notify(on_state, "tuning", {"phase": "executing",
                                     "run_index": run_index})
        outcome = runner("train_val", run_index)
        entry_id = f"dec_{run_index:04d}"
        common = dict(
            entry_id=entry_id, run_index=run_index, primary_metric=primary_id,
            proposal_summary=proposal.summary,
            proposal_rationale=proposal.rationale,
            workspace_version=version, status=outcome.status,
            incumbent_value=state.incumbent_value,
            malformed_lines=outcome.malformed_lines,
            exit_code=outcome.exit_code, timed_out=outcome.timed_out)

        if outcome.status != "completed":
            entry = LedgerEntry(decision="rejected_crash", candidate_value=None,
                                running_best=state.running_best, **common)
            ledger.append(entry)
            state.absorb(entry.to_dict())
            ws.revert_to(state.incumbent_version, note="reject crash")
            continue

        value = outcome.best_val(base_name, direction == "maximize")
        value = None if value is None else float(value)
        metrics, op = collect_split_metrics(spec, outcome.artifacts_dir)

        if not better(value, state.incumbent_value, direction):
            entry = LedgerEntry(decision="rejected_worse", candidate_value=value,
                                running_best=state.running_best,
                                val_metrics=metrics, operating_point=op, **common)
            ledger.append(entry)
            state.absorb(entry.to_dict())
            ws.revert_to(state.incumbent_version, note="reject no improvement")
            continue

        checks = check_guards(spec, state.incumbent_metrics, metrics)
        check_dicts = [c.to_dict() for c in checks]
        violated = [c for c in checks if c.violated]

        if not violated:
            entry = LedgerEntry(decision="accepted", candidate_value=value,
                                running_best=value, val_metrics=metrics,
                                operating_point=op, guard_checks=check_dicts,
                                **common)
            ledger.append(entry)
            state.absorb(entry.to_dict())
            continue

        if any(c.action == "reject" for c in violated):
            entry = LedgerEntry(decision="rejected_guard", candidate_value=value,
                                running_best=state.running_best,
                                val_metrics=metrics, operating_point=op,
                                guard_checks=check_dicts, **common)
            ledger.append(entry)
            state.absorb(entry.to_dict())
            ws.revert_to(state.incumbent_version, note="reject guard violation")
            continue

        # Every violated guard defers to a human.
        entry = LedgerEntry(decision="pending_clinician", candidate_value=value,
                            running_best=state.running_best,
                            val_metrics=metrics, operating_point=op,
                            guard_checks=check_dicts, **common)
        ledger.append(entry)
        state.absorb(entry.to_dict())
        choice, by = _await_decision(ledger, entry_id, cfg, on_state,
                                     {"entry": entry.to_dict()})
        _resolve_pending(spec, ws, ledger, state, choice, by)

    _notify(on_state, "tuned", {"runs_used": state.runs_used,
                                "running_best": state.running_best})
    return LoopResult(runs_used=state.runs_used,
                      running_best=state.running_best,
                      best_version=state.incumbent_version,
                      reason="budget_exhausted")


def _resolve_pending(spec: TaskSpec, ws: Workspace, ledger: Ledger,
                     state: LoopState, choice: str, by: str) -> None:
    """Append the resolution twin of a parked entry and move the tree."""
    pending = state.pending
    assert pending is not None
    accepted = choice == "accept"
    entry = LedgerEntry(
        entry_id=pending["entry_id"] + "_res",
        run_index=pending["run_index"],
        decision="accepted" if accepted else "rejected_guard",
        primary_metric=pending["primary_metric"],
        proposal_summary=pending.get("proposal_summary", ""),
        workspace_version=pending["workspace_version"],
        status=pending.get("status", "completed"),
        candidate_value=pending.get("candidate_value"),
        incumbent_value=state.incumbent_value,
        running_best=(pending.get("candidate_value") if accepted
                      else state.running_best),
        val_metrics=dict(pending.get("val_metrics") or {}),
        operating_point=dict(pending.get("operating_point") or {}),
        guard_checks=list(pending.get("guard_checks") or []),
        resolution_of=pending["entry_id"], resolved_by=by)
    ledger.append(entry)
    state.absorb(entry.to_dict())
    if not accepted:
        ws.revert_to(state.incumbent_version, note="clinician rejected")


# --- presentation helpers --------------------------------------------------------

def ledger_table(entries: list[dict]) -> str:
    """Compact history for the developer prompt and terminal display."""
    if not entries:
        return "(no runs yet)"
    header = f"{'run':>4}  {'decision':<18} {'value':>10} {'best':>10}  summary"
    lines = [header, "-" * len(header)]
    for e in entries:
        value = e.get("candidate_value")
        best = e.get("running_best")
        lines.append(
            f"{e['run_index']:>4}  {e['decision']:<18} "
            f"{'-' if value is None else format(value, '.4f'):>10} "
            f"{'-' if best is None else format(best, '.4f'):>10}  "
            f"{(e.get('proposal_summary') or '')[:48]}")
    return "\n".join(lines)


def export_trajectory_csv(entries: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_index", "decision", "candidate_value",
                    "running_best", "workspace_version", "proposal_summary"])
        for e in entries:
            w.writerow([e["run_index"], e["decision"],
                        e.get("candidate_value"), e.get("running_best"),
                        e.get("workspace_version"),
                        e.get("proposal_summary", "")])


# --- one-touch test evaluation ----------------------------------------------------

def evaluate_test_once(spec: TaskSpec, ws: Workspace, ledger: Ledger,
                       test_budget_seconds: float = 120.0,
                       grace_seconds: float = 10.0,
                       bootstrap: BootstrapConfig | None = None) -> dict:
    """Score the baseline and best-kept trees on the held-out split, once ever.

    The gate is consumed before the sealed list is opened, so a crash still
    spends the task's single test evaluation; the partial gate record says
    what happened. Both trees are scored inside this one gated event, with
    operating points frozen on the same run's validation artifacts.
    """
    gate = ledger.read_gate()
    if gate.get("consumed"):
        raise TestAlreadyConsumed("the test split has already been evaluated")
    state = replay_state(ledger.entries())
    if state.incumbent_version is None:
        raise NoCompletedRun("no kept run to evaluate")

    base_name, _ = parse_metric_id(spec.primary_metric.metric)
    run_initial = state.next_run_index
    run_tuned = run_initial + 1
    ledger.write_gate({"consumed": True, "initial_version": 0,
                       "best_version": state.incumbent_version,
                       "run_indices": [run_initial, run_tuned],
                       "report": None})

    return_version = state.incumbent_version
    ws.revert_to(0, note="test eval: baseline tree")
    out_initial = ws.run_test_split(run_initial, test_budget_seconds,
                                    base_name, grace_seconds)
    ws.revert_to(return_version, note="test eval: best tree")
    out_tuned = ws.run_test_split(run_tuned, test_budget_seconds,
                                  base_name, grace_seconds)

    if out_initial.status != "completed" or out_tuned.status != "completed":
        failed = ledger.read_gate()
        failed["error"] = "test evaluation crashed; the single attempt is spent"
        ledger.write_gate(failed)
        raise GateError(failed["error"])

    report = build_test_report(spec, out_initial, out_tuned,
                               bootstrap or BootstrapConfig())
    done = ledger.read_gate()
    done["report"] = report
    ledger.write_gate(done)
    return report


def _variant_report(spec: TaskSpec, outcome: RunOutcome,
                    bootstrap: BootstrapConfig) -> tuple[dict, object, object]:
    val_set = load_artifact_set(Path(outcome.artifacts_dir), "val")
    test_set = load_artifact_set(Path(outcome.artifacts_dir), "test")
    if val_set is None or test_set is None:
        raise GateError("test run left no scoreable artifacts")
    ctx = select_operating_context(spec.task_kind, val_set, classes=spec.classes)
    metrics, op = collect_split_metrics(spec, Path(outcome.artifacts_dir),
                                        split="test", ctx=ctx)
    primary_id = spec.primary_metric.metric
    data = test_set.detection if spec.task_kind == "detection" \
        else test_set.classification

    def metric_fn(resampled):
        from .metrics.registry import ArtifactSet
        art = ArtifactSet(detection=resampled) if spec.task_kind == "detection" \
            else ArtifactSet(classification=resampled)
        return compute_metric(primary_id, spec.task_kind, art, ctx)

    ci = bootstrap_ci(data, metric_fn, bootstrap)
    variant = {
        "metrics": metrics,
        "operating_point": op,
        "primary_ci": {"point": ci.point, "lo": ci.lo, "hi": ci.hi,
                       "formatted": format_ci(ci.point, ci.lo, ci.hi)},
    }
    return variant, data, metric_fn


def build_test_report(spec: TaskSpec, out_initial: RunOutcome,
                      out_tuned: RunOutcome,
                      bootstrap: BootstrapConfig) -> dict:
    initial, data_i, fn = _variant_report(spec, out_initial, bootstrap)
    tuned, data_t, _ = _variant_report(spec, out_tuned, bootstrap)
    p_value = paired_bootstrap_test(data_i, data_t, fn, bootstrap)
    report = {
        "primary_metric": spec.primary_metric.metric,
        "initial": initial,
        "tuned": tuned,
        "paired_p_value": float(p_value),
        "confound": None,
    }
    if spec.confounders and spec.task_kind == BINARY:
        report["confound"] = _confound_section(spec, out_initial, out_tuned)
    return report


def _confound_section(spec: TaskSpec, out_initial: RunOutcome,
                      out_tuned: RunOutcome) -> dict | None:
    def as_input(outcome):
        art = load_artifact_set(Path(outcome.artifacts_dir), "test")
        if art is None or art.classification is None or art.confounder is None:
            return None
        p = art.classification
        return ConfoundInput(case_ids=p.case_ids, y_true=p.labels,
                             p_disease=p.scores, p_confounder=art.confounder,
                             flag_threshold=spec.confounders[0].flag_threshold)

    inp_initial = as_input(out_initial)
    inp_tuned = as_input(out_tuned)
    if inp_initial is None or inp_tuned is None:
        return None
    rep = confound_report(inp_tuned, baseline=inp_initial)
    out = rep.to_dict()
    out["rendered"] = render_confound_text(rep)
    return out


def render_test_report_text(report: dict) -> str:
    """Human-readable held-out report for the CLI and logs."""
    lines = [f"primary metric: {report['primary_metric']}"]
    init = report["initial"]
    tuned = report["tuned"]
    lines.append(f"  initial: {init['primary_ci']['formatted']}")
    lines.append(f"  tuned:   {tuned['primary_ci']['formatted']}")
    lines.append(f"  paired bootstrap p-value: {report['paired_p_value']:.4f}")
    extra = sorted(set(init["metrics"]) | set(tuned["metrics"]))
    extra = [m for m in extra if m != report["primary_metric"]]
    if extra:
        lines.append("secondary metrics (test split):")
        width = max(len(m) for m in extra)
        for mid in extra:
            a = init["metrics"].get(mid)
            b = tuned["metrics"].get(mid)
            fmt = lambda v: "-" if v is None else f"{v:.4f}"
            lines.append(f"  {mid:<{width}}  initial {fmt(a)}  tuned {fmt(b)}")
    if report.get("confound"):
        lines.append("")
        lines.append(report["confound"]["rendered"])
    return "\n".join(lines)
