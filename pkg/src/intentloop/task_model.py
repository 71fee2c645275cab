"""Clinician requests and the structured task specs derived from them.

A request is free text. A task spec is the machine-readable contract the rest
of the system works against: task kind, classes, error preferences, declared
confounders, metrics and guard rails. Specs serialize to JSON with an
explicit schema_version and round-trip losslessly.

Two parsers produce specs: a deterministic keyword-rule parser (no agent in
the loop, used as a test double and an offline fallback) and an agent-backed
parser that prompts a provider for spec JSON and re-prompts on schema errors.
"""

from __future__ import annotations

import json
import re
import uuid
from dataclasses import dataclass, field, replace

from .errors import SpecInvalid, UnparseableResponse, UnrecognizedRequest
from .metrics import registry

SCHEMA_VERSION = 1

TASK_KINDS = registry.TASK_KINDS
ERROR_ASYMMETRIES = ("none", "minimize_false_negatives", "minimize_false_positives")
FLAG_SOURCES = ("provided_column", "external_classifier")
DIRECTIONS = ("maximize", "minimize")
GUARD_ACTIONS = ("reject", "ask_clinician")
SUPERVISION_MODES = ("full", "mixed")
ANNOTATION_KINDS = ("class_label", "boxes", "image_level_only")


@dataclass(frozen=True)
class ClinicianRequest:
    """A verbatim free-text request, as submitted."""

    request_id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("request text must be non-empty")

    @classmethod
    def new(cls, text: str) -> "ClinicianRequest":
        return cls(request_id=f"req_{uuid.uuid4().hex[:12]}", text=text)


@dataclass(frozen=True)
class ConfounderSpec:
    """A declared artifact the model must not lean on."""

    name: str
    flag_source: str = "external_classifier"
    flag_threshold: float = 0.5


@dataclass(frozen=True)
class MetricGuard:
    """Tolerance on a secondary metric relative to the accepted best."""

    metric: str
    max_degradation: float
    on_violation: str = "ask_clinician"


@dataclass(frozen=True)
class PrimaryMetric:
    metric: str
    direction: str = "maximize"


@dataclass(frozen=True)
class ManifestRef:
    """Paths to the three case lists; the test list is quarantined."""

    train_list: str
    val_list: str
    test_list: str
    quarantined: bool = False


@dataclass(frozen=True)
class TaskSpec:
    task_kind: str
    classes: tuple[str, ...]
    primary_metric: PrimaryMetric
    priority_class: str | None = None
    error_asymmetry: str = "none"
    confounders: tuple[ConfounderSpec, ...] = ()
    secondary_metrics: tuple[str, ...] = ()
    guards: tuple[MetricGuard, ...] = ()
    supervision: str = "full"
    data_manifest: ManifestRef | None = None
    schema_version: int = SCHEMA_VERSION

    def with_manifest(self, manifest: ManifestRef) -> "TaskSpec":
        return replace(self, data_manifest=manifest)


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    message: str


# --- serialization -----------------------------------------------------------

def spec_to_dict(spec: TaskSpec) -> dict:
    return {
        "schema_version": spec.schema_version,
        "task_kind": spec.task_kind,
        "classes": list(spec.classes),
        "priority_class": spec.priority_class,
        "error_asymmetry": spec.error_asymmetry,
        "confounders": [
            {"name": c.name, "flag_source": c.flag_source,
             "flag_threshold": c.flag_threshold}
            for c in spec.confounders
        ],
        "primary_metric": {"metric": spec.primary_metric.metric,
                           "direction": spec.primary_metric.direction},
        "secondary_metrics": list(spec.secondary_metrics),
        "guards": [
            {"metric": g.metric, "max_degradation": g.max_degradation,
             "on_violation": g.on_violation}
            for g in spec.guards
        ],
        "supervision": spec.supervision,
        "data_manifest": None if spec.data_manifest is None else {
            "train_list": spec.data_manifest.train_list,
            "val_list": spec.data_manifest.val_list,
            "test_list": spec.data_manifest.test_list,
            "quarantined": spec.data_manifest.quarantined,
        },
    }


def spec_to_json(spec: TaskSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def spec_from_dict(d: dict) -> TaskSpec:
    manifest = d.get("data_manifest")
    pm = d.get("primary_metric") or {}
    return TaskSpec(
        schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        task_kind=str(d.get("task_kind", "")),
        classes=tuple(str(c) for c in d.get("classes", [])),
        priority_class=d.get("priority_class"),
        error_asymmetry=str(d.get("error_asymmetry", "none")),
        confounders=tuple(
            ConfounderSpec(
                name=str(c.get("name", "")),
                flag_source=str(c.get("flag_source", "external_classifier")),
                flag_threshold=float(c.get("flag_threshold", 0.5)),
            )
            for c in d.get("confounders", [])
        ),
        primary_metric=PrimaryMetric(
            metric=str(pm.get("metric", "")),
            direction=str(pm.get("direction", "maximize")),
        ),
        secondary_metrics=tuple(str(m) for m in d.get("secondary_metrics", [])),
        guards=tuple(
            MetricGuard(
                metric=str(g.get("metric", "")),
                max_degradation=float(g.get("max_degradation", 0.0)),
                on_violation=str(g.get("on_violation", "ask_clinician")),
            )
            for g in d.get("guards", [])
        ),
        supervision=str(d.get("supervision", "full")),
        data_manifest=None if manifest is None else ManifestRef(
            train_list=str(manifest["train_list"]),
            val_list=str(manifest["val_list"]),
            test_list=str(manifest["test_list"]),
            quarantined=bool(manifest.get("quarantined", False)),
        ),
    )


def spec_from_json(text: str) -> TaskSpec:
    return spec_from_dict(json.loads(text))


# --- validation ---------------------------------------------------------------

def validate_spec(spec: TaskSpec) -> list[Violation]:
    """All invariant violations, named by field and rule; empty means valid."""
    v: list[Violation] = []
    if spec.schema_version < 1:
        v.append(Violation("schema_version", "schema_version_positive",
                           "schema_version must be >= 1"))
    if spec.task_kind not in TASK_KINDS:
        v.append(Violation("task_kind", "task_kind_unknown",
                           f"unknown task kind {spec.task_kind!r}"))
        return v  # nothing downstream is checkable

    min_classes = 1 if spec.task_kind == registry.DETECTION else 2
    if len(spec.classes) < min_classes:
        v.append(Violation("classes", "classes_min_count",
                           f"{spec.task_kind} needs >= {min_classes} classes"))
    if len(set(spec.classes)) != len(spec.classes):
        v.append(Violation("classes", "classes_unique", "duplicate class names"))
    if spec.priority_class is not None and spec.priority_class not in spec.classes:
        v.append(Violation("priority_class", "priority_class_not_in_classes",
                           f"{spec.priority_class!r} is not a declared class"))
    if spec.error_asymmetry not in ERROR_ASYMMETRIES:
        v.append(Violation("error_asymmetry", "error_asymmetry_unknown",
                           f"unknown asymmetry {spec.error_asymmetry!r}"))
    if spec.supervision not in SUPERVISION_MODES:
        v.append(Violation("supervision", "supervision_unknown",
                           f"unknown supervision {spec.supervision!r}"))
    for i, c in enumerate(spec.confounders):
        if not c.name:
            v.append(Violation(f"confounders[{i}].name", "confounder_name_empty",
                               "confounder name must be non-empty"))
        if c.flag_source not in FLAG_SOURCES:
            v.append(Violation(f"confounders[{i}].flag_source", "flag_source_unknown",
                               f"unknown flag source {c.flag_source!r}"))
        if not 0.0 <= c.flag_threshold <= 1.0:
            v.append(Violation(f"confounders[{i}].flag_threshold",
                               "flag_threshold_range",
                               "flag threshold must be in [0, 1]"))
    if spec.primary_metric.direction not in DIRECTIONS:
        v.append(Violation("primary_metric.direction", "direction_unknown",
                           f"unknown direction {spec.primary_metric.direction!r}"))
    if not registry.valid_for(spec.primary_metric.metric, spec.task_kind):
        v.append(Violation("primary_metric.metric", "metric_incompatible_with_task",
                           f"{spec.primary_metric.metric!r} is not valid for "
                           f"{spec.task_kind}"))
    for i, m in enumerate(spec.secondary_metrics):
        if not registry.valid_for(m, spec.task_kind):
            v.append(Violation(f"secondary_metrics[{i}]",
                               "metric_incompatible_with_task",
                               f"{m!r} is not valid for {spec.task_kind}"))
    declared = set(spec.secondary_metrics) | {spec.primary_metric.metric}
    for i, g in enumerate(spec.guards):
        if g.metric not in declared:
            v.append(Violation(f"guards[{i}].metric", "guard_metric_not_declared",
                               f"guard metric {g.metric!r} must be the primary or a "
                               "declared secondary metric"))
        if g.max_degradation < 0.0:
            v.append(Violation(f"guards[{i}].max_degradation",
                               "max_degradation_negative",
                               "max_degradation must be >= 0"))
        if g.on_violation not in GUARD_ACTIONS:
            v.append(Violation(f"guards[{i}].on_violation", "guard_action_unknown",
                               f"unknown guard action {g.on_violation!r}"))
    return v


def require_valid(spec: TaskSpec) -> TaskSpec:
    violations = validate_spec(spec)
    if violations:
        raise SpecInvalid(violations)
    return spec


# --- rule-based parsing ---------------------------------------------------------

_RE_DISTINGUISH = re.compile(
    r"\bdistinguish\s+([a-z][\w-]*)\s+from\s+([a-z][\w-]*)", re.IGNORECASE)
_RE_DETECT_TASK = re.compile(
    r"\b(?:find|mark)\b.*?\bimages?\b", re.IGNORECASE | re.DOTALL)
_RE_FIND_CLASS = re.compile(
    r"\b(?:find|mark)\s+(?:suspicious\s+)?([a-z][\w-]*)", re.IGNORECASE)
_RE_CLASSIFY_TASK = re.compile(r"\b(?:diagnos\w*|classif\w*)\b", re.IGNORECASE)
_RE_PRIORITY = re.compile(
    r"\bpriority\b[^.!?]*?\bto\s+(?:the\s+)?([a-z][\w-]*)", re.IGNORECASE)
_RE_MISS = re.compile(
    r"\bnot\s+(?:to\s+)?miss\b|\bnever\s+miss\b|\bwithout\s+missing\b|\bmissed\b",
    re.IGNORECASE)
_RE_FALSE_ALARM = re.compile(
    r"\bfalse\s+(?:alarm|positive)s?\b", re.IGNORECASE)
_RE_AVOID_RELIANCE = re.compile(
    r"\b(?:do\s+not|don'?t|should\s+not|shouldn'?t|must\s+not|not\s+to)\s+"
    r"(?:rely\s+on|use|depend\s+on|key\s+on|be\s+influenced\s+by)\s+"
    r"(?:the\s+|a\s+|any\s+)?([a-z][\w\s-]*?)(?=[.,;!?]|$)",
    re.IGNORECASE)


def _singular(word: str) -> str:
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


# Words that start a trailing clause rather than extend the noun phrase.
_NOUN_BOUNDARY = frozenset(
    "when while during if unless because since so that which where before "
    "after until as of in on at by with without to for and or".split())


def _normalize_noun(phrase: str) -> str:
    words = []
    for w in phrase.strip().lower().split():
        if w in _NOUN_BOUNDARY or len(words) == 3:
            break
        words.append(w)
    if not words:
        return ""
    words[-1] = _singular(words[-1])
    return "_".join(words)


def parse_request_rules(request: ClinicianRequest) -> TaskSpec:
    """Deterministic keyword-rule parsing of a clinician request.

    Recognized families: "distinguish X from Y" (binary classification),
    "find/mark ... images" (detection), diagnose/classify wording (multiclass
    fallback), "priority ... to <class>", miss-avoidance and false-alarm
    wording (error asymmetry), and "do not rely on <noun>" (confounders).
    Raises UnrecognizedRequest when no task-kind rule fires; the same text
    always yields a byte-identical spec.
    """
    text = request.text

    m_priority = _RE_PRIORITY.search(text)
    priority = m_priority.group(1).lower() if m_priority else None

    asymmetry = "none"
    if _RE_MISS.search(text):
        asymmetry = "minimize_false_negatives"
    elif _RE_FALSE_ALARM.search(text):
        asymmetry = "minimize_false_positives"

    confounders = tuple(
        ConfounderSpec(name=_normalize_noun(m.group(1)),
                       flag_source="external_classifier",
                       flag_threshold=0.5)
        for m in _RE_AVOID_RELIANCE.finditer(text)
        if _normalize_noun(m.group(1))
    )

    m_binary = _RE_DISTINGUISH.search(text)
    if m_binary:
        classes = (m_binary.group(1).lower(), m_binary.group(2).lower())
        secondary = ["sensitivity", "specificity"]
        guards: list[MetricGuard] = []
        if asymmetry == "minimize_false_negatives":
            secondary.append("sensitivity_at_specificity@0.80")
            guards.append(MetricGuard("sensitivity", 0.02, "ask_clinician"))
        elif asymmetry == "minimize_false_positives":
            guards.append(MetricGuard("specificity", 0.02, "ask_clinician"))
        spec = TaskSpec(
            task_kind=registry.BINARY,
            classes=classes,
            priority_class=priority if priority in classes else None,
            error_asymmetry=asymmetry,
            confounders=confounders,
            primary_metric=PrimaryMetric("auc", "maximize"),
            secondary_metrics=tuple(secondary),
            guards=tuple(guards),
        )
        return require_valid(spec)

    if _RE_DETECT_TASK.search(text):
        m_class = _RE_FIND_CLASS.search(text)
        target = _singular(m_class.group(1).lower()) if m_class else "finding"
        guards = []
        if asymmetry == "minimize_false_negatives":
            guards.append(MetricGuard("recall@50", 0.02, "ask_clinician"))
        spec = TaskSpec(
            task_kind=registry.DETECTION,
            classes=(target,),
            priority_class=None,
            error_asymmetry=asymmetry,
            confounders=confounders,
            primary_metric=PrimaryMetric("map50", "maximize"),
            secondary_metrics=("map50_95", "precision@50", "recall@50", "f1@50"),
            guards=tuple(guards),
        )
        return require_valid(spec)

    if _RE_CLASSIFY_TASK.search(text):
        classes = (priority, "other") if priority else ("target_condition", "other")
        secondary = ["f1"]
        if priority:
            secondary.append(f"auc@{priority}")
        guards = []
        if asymmetry == "minimize_false_negatives":
            guards.append(MetricGuard("f1", 0.02, "ask_clinician"))
        spec = TaskSpec(
            task_kind=registry.MULTICLASS,
            classes=classes,
            priority_class=priority,
            error_asymmetry=asymmetry,
            confounders=confounders,
            primary_metric=PrimaryMetric("auc", "maximize"),
            secondary_metrics=tuple(secondary),
            guards=tuple(guards),
        )
        return require_valid(spec)

    raise UnrecognizedRequest(
        "no task-kind rule matched; expected distinguish/find/mark/diagnose wording")


# --- agent-backed parsing --------------------------------------------------------

_MAX_REPROMPTS = 3


def _extract_json_object(text: str) -> dict:
    """First JSON object in the text, tolerating code fences and prose."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text[start:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise UnparseableResponse("no JSON object found in provider output")


def parse_request(request: ClinicianRequest, gateway) -> TaskSpec:
    """Agent-backed request parsing.

    Prompts the provider for spec JSON, validates it, and re-prompts with the
    violation list up to three times before failing. The raw exchanges are
    retained in the gateway audit log.
    """
    from .gateway import AgentRole, render_template  # local import; no cycle at module load

    correction = ""
    last_error: Exception = UnparseableResponse("provider produced no output")
    for _ in range(1 + _MAX_REPROMPTS):
        prompt = render_template("semantic_parser", request_text=request.text,
                                 correction=correction)
        response = gateway.complete(AgentRole.SEMANTIC_PARSER, prompt)
        try:
            payload = _extract_json_object(response)
            spec = spec_from_dict(payload)
        except (UnparseableResponse, KeyError, TypeError, ValueError) as exc:
            last_error = UnparseableResponse(f"bad spec payload: {exc}")
            correction = ("\nYour previous reply was not a valid spec object "
                          f"({exc}). Reply with exactly one JSON object.")
            continue
        violations = validate_spec(spec)
        if violations:
            last_error = SpecInvalid(violations)
            detail = "; ".join(f"{x.field}: {x.message}" for x in violations)
            correction = ("\nYour previous spec violated these rules: "
                          f"{detail}. Reply with one corrected JSON object.")
            continue
        return spec
    raise last_error
