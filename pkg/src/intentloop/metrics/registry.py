"""Metric-id resolution for task specs.

Task specs name metrics by short string ids ("auc", "map50",
"sensitivity_at_specificity@0.80", "auc@melanoma", ...). This module knows
which ids are valid for which task kind, which direction each one improves
in, and how to compute each from a run's prediction artifacts.

Threshold-dependent metrics need an operating point. Operating points are
selected on validation predictions (Youden threshold for classification, the
F1-maximizing confidence for detection) and can then be frozen and reused on
the held-out split so nothing is tuned on test data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GuardMetricMissing
from . import classification as cls
from . import detection as det

BINARY = "binary_classification"
MULTICLASS = "multiclass_classification"
DETECTION = "detection"

CLASSIFICATION_KINDS = (BINARY, MULTICLASS)
TASK_KINDS = (BINARY, MULTICLASS, DETECTION)


@dataclass(frozen=True)
class ArtifactSet:
    """Parsed prediction artifacts from one run and split."""

    classification: cls.ClassificationPredictions | None = None
    detection: det.DetectionPredictions | None = None
    confounder: np.ndarray | None = None  # aligned with classification order


@dataclass(frozen=True)
class OperatingContext:
    """Frozen operating points plus the class-name order of the task."""

    classes: tuple[str, ...] = ()
    class_threshold: float | None = None
    det_conf_threshold: float = 0.0
    per_class_thresholds: dict = field(default_factory=dict)


def parse_metric_id(metric_id: str) -> tuple[str, str | None]:
    """Split "base@param" ids; plain ids return (id, None)."""
    if "@" in metric_id:
        base, param = metric_id.split("@", 1)
        return base, param
    return metric_id, None


_CLASSIFICATION_IDS = {"auc", "f1", "sensitivity", "specificity", "precision",
                       "sensitivity_at_specificity"}
_BINARY_ONLY_IDS = {"sensitivity", "specificity", "precision",
                    "sensitivity_at_specificity"}
_DETECTION_IDS = {"map50", "map50_95", "precision", "recall", "f1"}

_MINIMIZE_IDS: set[str] = set()  # every current id improves upward


def metric_direction(metric_id: str) -> str:
    base, _ = parse_metric_id(metric_id)
    return "minimize" if base in _MINIMIZE_IDS else "maximize"


def valid_for(metric_id: str, task_kind: str) -> bool:
    """Whether a metric id is computable for a task kind."""
    base, param = parse_metric_id(metric_id)
    if task_kind == DETECTION:
        # detection threshold metrics are written precision@50 etc.
        if base in {"precision", "recall", "f1"}:
            return param == "50"
        return base in {"map50", "map50_95"} and param is None
    if task_kind in CLASSIFICATION_KINDS:
        if base == "auc":
            return param is None or task_kind == MULTICLASS  # auc@<class> is OVR
        if base == "sensitivity_at_specificity":
            if task_kind != BINARY or param is None:
                return False
            try:
                return 0.0 <= float(param) <= 1.0
            except ValueError:
                return False
        if base in _BINARY_ONLY_IDS:
            return task_kind == BINARY and param is None
        return base == "f1" and param is None
    return False


def select_operating_context(task_kind: str, artifacts: ArtifactSet,
                             classes: tuple[str, ...] = ()) -> OperatingContext:
    """Choose operating points from validation predictions.

    Binary: the Youden threshold. Detection: the observed confidence
    maximizing pooled F1 at IoU 0.50 (smallest such confidence on ties).
    Multiclass carries no global threshold; per-class Youden points are
    recorded for reporting.
    """
    if task_kind == BINARY and artifacts.classification is not None:
        p = artifacts.classification
        cand, sens, spec = cls.threshold_scan(p.labels, p.scores)
        j = sens + spec - 1.0
        return OperatingContext(classes=tuple(classes),
                                class_threshold=float(cand[int(np.argmax(j))]))
    if task_kind == MULTICLASS and artifacts.classification is not None:
        p = artifacts.classification
        per_class = {}
        for k, name in enumerate(classes):
            ovr = (p.labels == k).astype(int)
            if ovr.min() == ovr.max():
                continue
            cand, sens, spec = cls.threshold_scan(ovr, p.scores[:, k])
            per_class[name] = float(cand[int(np.argmax(sens + spec - 1.0))])
        return OperatingContext(classes=tuple(classes), per_class_thresholds=per_class)
    if task_kind == DETECTION and artifacts.detection is not None:
        d = artifacts.detection
        confs = sorted({float(s) for im in d.images for s in im.pred[:, 4]})
        best_conf, best_f1 = 0.0, -1.0
        for c in confs or [0.0]:
            f1 = det.detection_prf(d, 0.5, c)["f1"]
            if f1 > best_f1:  # strict: ties keep the smallest confidence
                best_conf, best_f1 = c, f1
        return OperatingContext(classes=tuple(classes), det_conf_threshold=best_conf)
    return OperatingContext(classes=tuple(classes))


def compute_metric(metric_id: str, task_kind: str, artifacts: ArtifactSet,
                   ctx: OperatingContext) -> float:
    """Evaluate one metric id against prediction artifacts."""
    base, param = parse_metric_id(metric_id)
    if task_kind == DETECTION:
        d = artifacts.detection
        if d is None:
            raise GuardMetricMissing(f"no detection artifact for {metric_id}")
        if base == "map50":
            return det.average_precision(d, 0.50)
        if base == "map50_95":
            return det.map_range(d)["map50_95"]
        prf = det.detection_prf(d, 0.5, ctx.det_conf_threshold)
        return float(prf[base])

    p = artifacts.classification
    if p is None:
        raise GuardMetricMissing(f"no classification artifact for {metric_id}")
    if base == "auc":
        if param is not None:
            k = ctx.classes.index(param)
            return cls.roc_auc((p.labels == k).astype(int), p.scores[:, k])
        if p.scores.ndim == 2:
            return cls.macro_ovr_auc(p.labels, p.scores)
        return cls.roc_auc(p.labels, p.scores)
    if base == "sensitivity_at_specificity":
        return cls.sensitivity_at_specificity(p.labels, p.scores, float(param))["sensitivity"]
    if base == "f1" and p.scores.ndim == 2:
        return cls.macro_argmax_f1(p.labels, p.scores)
    if ctx.class_threshold is None:
        raise GuardMetricMissing(f"{metric_id} needs an operating threshold")
    rates = cls.confusion_at_threshold(p.labels, p.scores, ctx.class_threshold)
    return float(rates[base])


def compute_metrics(metric_ids, task_kind: str, artifacts: ArtifactSet,
                    ctx: OperatingContext) -> dict[str, float]:
    return {mid: compute_metric(mid, task_kind, artifacts, ctx) for mid in metric_ids}
