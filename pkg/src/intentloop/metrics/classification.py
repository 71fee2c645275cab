"""Classification metrics over per-case labels and scores.

All functions are pure and operate on numpy arrays. A single thresholding
convention applies everywhere: a case is predicted positive when its score is
greater than or equal to the threshold. Threshold scans consider every
observed score plus +inf (the "predict nothing" operating point); nothing is
interpolated between observed points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ..errors import MissingClass, SingleClassInput


@dataclass(frozen=True)
class ClassificationPredictions:
    """Per-case labels and scores.

    ``scores`` is a 1-D array of positive-class scores for binary tasks, or
    an (n, K) matrix of per-class scores for multiclass tasks. Scores live in
    [0, 1]; labels are integer class indices (0/1 for binary).
    """

    case_ids: tuple[str, ...]
    labels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        if not (len(self.case_ids) == len(self.labels) == len(self.scores)):
            raise ValueError("case_ids, labels and scores must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return 2 if self.scores.ndim == 1 else int(self.scores.shape[1])

    def subset(self, indices) -> "ClassificationPredictions":
        idx = np.asarray(indices, dtype=int)
        return ClassificationPredictions(
            tuple(self.case_ids[i] for i in idx),
            self.labels[idx],
            self.scores[idx],
        )


def _split_by_label(labels: np.ndarray, scores: np.ndarray):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassInput("need at least one positive and one negative case")
    return pos, neg


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney rank statistic.

    Equals the fraction of (positive, negative) pairs in which the positive
    case scores strictly higher, with ties counting half.
    """
    pos, neg = _split_by_label(labels, scores)
    ranks = rankdata(np.concatenate([pos, neg]))
    rank_sum = float(ranks[: len(pos)].sum())
    wins = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return wins / (len(pos) * len(neg))


def confusion_at_threshold(labels, scores, threshold: float) -> dict:
    """Confusion-derived rates at a fixed threshold.

    Returns sensitivity, specificity, precision and f1 plus the raw counts.
    Precision is 0 by convention when nothing is predicted positive, and f1
    is 0 when precision and sensitivity are both 0.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    _split_by_label(labels, scores)  # both classes must be present
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    sensitivity = tp / (tp + fn)
    specificity = tn / (tn + fp)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    denom = precision + sensitivity
    f1 = 2.0 * precision * sensitivity / denom if denom > 0 else 0.0
    return {
        "sensitivity": sensitivity,
        "specificity": specificity,
        "precision": precision,
        "f1": f1,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tn": tn,
    }


def threshold_scan(labels, scores):
    """Sensitivity/specificity at every candidate threshold.

    Candidates are the unique observed scores plus +inf, ascending. Returns
    (thresholds, sensitivity, specificity) arrays of equal length.
    """
    pos, neg = _split_by_label(labels, scores)
    cand = np.concatenate([np.unique(np.asarray(scores, dtype=float)), [np.inf]])
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # count of scores >= t, via first index not below t
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, cand, side="left")
    fp = len(neg_sorted) - np.searchsorted(neg_sorted, cand, side="left")
    sens = tp / len(pos_sorted)
    spec = (len(neg_sorted) - fp) / len(neg_sorted)
    return cand, sens, spec


def sensitivity_at_specificity(labels, scores, target_specificity: float) -> dict:
    """Best sensitivity subject to specificity >= target.

    Scans observed thresholds only. Among thresholds meeting the target, the
    highest sensitivity wins; exact ties resolve to the smallest threshold.
    The +inf candidate guarantees a feasible point (sensitivity 0).
    """
    if not 0.0 <= target_specificity <= 1.0:
        raise ValueError("target specificity must be in [0, 1]")
    cand, sens, spec = threshold_scan(labels, scores)
    ok = spec >= target_specificity
    idx = np.flatnonzero(ok)
    best = idx[np.argmax(sens[idx])]  # argmax keeps the first (smallest) threshold
    return {
        "sensitivity": float(sens[best]),
        "threshold": float(cand[best]),
        "specificity": float(spec[best]),
    }


def _binary_f1_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    denom = precision + recall
    return 2.0 * precision * recall / denom if denom > 0 else 0.0


def macro_ovr_auc(labels, scores) -> float:
    """Unweighted mean of one-vs-rest AUCs over all score columns."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("macro AUC needs an (n, K) score matrix")
    labels = np.asarray(labels)
    return float(
        np.mean([roc_auc(labels == k, scores[:, k]) for k in range(scores.shape[1])])
    )


def multiclass_summary(labels, scores, class_names=None) -> dict:
    """One-vs-rest summary for a K-class problem (K >= 3).

    Per class: OVR AUC, plus sensitivity and specificity at the class-wise
    Youden operating point (the observed threshold maximizing
    sensitivity + specificity - 1, smallest threshold on ties). macro_auc and
    macro_f1 are unweighted means; per-class f1 for the macro uses argmax
    class assignment, not the Youden point.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[1] < 3:
        raise ValueError("multiclass summary needs an (n, K) score matrix with K >= 3")
    k_total = scores.shape[1]
    if class_names is None:
        class_names = [str(k) for k in range(k_total)]
    for k in range(k_total):
        if not np.any(labels == k):
            raise MissingClass(f"class {class_names[k]} absent from labels")

    predicted = np.argmax(scores, axis=1)
    per_class = {}
    aucs = []
    f1s = []
    for k in range(k_total):
        ovr = (labels == k).astype(int)
        col = scores[:, k]
        auc_k = roc_auc(ovr, col)
        cand, sens, spec = threshold_scan(ovr, col)
        j = sens + spec - 1.0
        best = int(np.argmax(j))
        tp = int(np.sum((predicted == k) & (labels == k)))
        fp = int(np.sum((predicted == k) & (labels != k)))
        fn = int(np.sum((predicted != k) & (labels == k)))
        f1s.append(_binary_f1_counts(tp, fp, fn))
        aucs.append(auc_k)
        per_class[class_names[k]] = {
            "auc": auc_k,
            "sensitivity": float(sens[best]),
            "specificity": float(spec[best]),
            "youden_threshold": float(cand[best]),
        }
    return {
        "macro_auc": float(np.mean(aucs)),
        "macro_f1": float(np.mean(f1s)),
        "per_class": per_class,
    }


def macro_argmax_f1(labels, scores) -> float:
    """Macro-averaged one-vs-rest f1 with argmax class assignment."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("macro f1 needs an (n, K) score matrix")
    predicted = np.argmax(scores, axis=1)
    f1s = []
    for k in range(scores.shape[1]):
        tp = int(np.sum((predicted == k) & (labels == k)))
        fp = int(np.sum((predicted == k) & (labels != k)))
        fn = int(np.sum((predicted != k) & (labels == k)))
        f1s.append(_binary_f1_counts(tp, fp, fn))
    return float(np.mean(f1s))
