"""Detection metrics: IoU, greedy matching, average precision, P/R/F1.

Boxes are pixel-space corner tuples (x1, y1, x2, y2) with x1 < x2 and
y1 < y2. A prediction matches a ground-truth box when their IoU reaches the
threshold (inclusive). Matching is greedy in descending confidence order and
each ground-truth box is consumed at most once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateBox, NoGroundTruth


@dataclass(frozen=True)
class ImageDetections:
    """Ground truth and predictions for one image.

    ``gt`` is (G, 4); ``pred`` is (P, 5) with columns x1, y1, x2, y2, score.
    """

    image_id: str
    gt: np.ndarray
    pred: np.ndarray

    def __post_init__(self):
        gt = np.asarray(self.gt, dtype=float).reshape(-1, 4)
        pred = np.asarray(self.pred, dtype=float).reshape(-1, 5)
        for boxes in (gt, pred[:, :4]):
            if len(boxes) and not np.all((boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])):
                raise DegenerateBox(f"zero-area box in image {self.image_id}")
        if len(pred) and (pred[:, 4].min() < 0.0 or pred[:, 4].max() > 1.0):
            raise ValueError("confidences must be in [0, 1]")
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "pred", pred)


@dataclass(frozen=True)
class DetectionPredictions:
    """A detection evaluation set; the resampling unit is the image."""

    images: tuple[ImageDetections, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def case_ids(self) -> tuple[str, ...]:
        return tuple(im.image_id for im in self.images)

    @property
    def n_gt(self) -> int:
        return int(sum(len(im.gt) for im in self.images))

    def subset(self, indices) -> "DetectionPredictions":
        return DetectionPredictions(tuple(self.images[int(i)] for i in indices))


def iou(box_a, box_b) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ax1, ay1, ax2, ay2 = (float(v) for v in box_a)
    bx1, by1, bx2, by2 = (float(v) for v in box_b)
    if ax2 <= ax1 or ay2 <= ay1 or bx2 <= bx1 or by2 <= by1:
        raise DegenerateBox("boxes must have positive area")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def match_detections(gt_boxes, preds, iou_threshold: float):
    """Greedy confidence-ordered matching within one image.

    Returns (tp_flags, gt_matched) boolean arrays aligned with the input
    order of ``preds`` and ``gt_boxes``. Each prediction claims the unmatched
    ground-truth box of highest IoU, and is a true positive when that IoU
    reaches the threshold. Confidence ties keep input order; IoU ties go to
    the lowest ground-truth index.
    """
    gt = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    pr = np.asarray(preds, dtype=float).reshape(-1, 5)
    tp = np.zeros(len(pr), dtype=bool)
    matched = np.zeros(len(gt), dtype=bool)
    order = np.argsort(-pr[:, 4], kind="stable")
    for k in order:
        best_iou = 0.0
        best_g = -1
        for g in range(len(gt)):
            if matched[g]:
                continue
            v = iou(pr[k, :4], gt[g])
            if v > best_iou:
                best_iou = v
                best_g = g
        if best_g >= 0 and best_iou >= iou_threshold:
            tp[k] = True
            matched[best_g] = True
    return tp, matched


def average_precision(det: DetectionPredictions, iou_threshold: float) -> float:
    """Average precision at one IoU threshold, 101-point interpolation.

    Predictions are pooled across images and ranked by descending confidence
    (ties broken by image and prediction order, deterministically); matching
    itself stays per-image. AP is the mean over recall levels 0.00..1.00 of
    the best precision achieved at or beyond each level, 0 where no such
    point exists.
    """
    if det.n_gt == 0:
        raise NoGroundTruth("average precision needs ground-truth boxes")
    rows = []
    for i, im in enumerate(det.images):
        if len(im.pred) == 0:
            continue
        tp, _ = match_detections(im.gt, im.pred, iou_threshold)
        for j in range(len(im.pred)):
            rows.append((float(im.pred[j, 4]), bool(tp[j]), i, j))
    if not rows:
        return 0.0
    rows.sort(key=lambda r: (-r[0], r[2], r[3]))
    flags = np.array([r[1] for r in rows], dtype=float)
    cum_tp = np.cumsum(flags)
    cum_fp = np.cumsum(1.0 - flags)
    precision = cum_tp / (cum_tp + cum_fp)
    recall = cum_tp / det.n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(101) / 100.0
    idx = np.searchsorted(recall, levels, side="left")
    inside = idx < len(recall)
    vals = np.where(inside, envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(vals.mean())


MAP_RANGE_THRESHOLDS = tuple((10 + i) / 20.0 for i in range(10))  # 0.50 .. 0.95


def map_range(det: DetectionPredictions) -> dict:
    """AP at IoU 0.50 plus the 0.50:0.95 ten-threshold mean."""
    aps = [average_precision(det, t) for t in MAP_RANGE_THRESHOLDS]
    return {"map50": aps[0], "map50_95": float(sum(aps) / len(aps))}


def detection_prf(det: DetectionPredictions, iou_threshold: float = 0.5,
                  confidence_threshold: float = 0.0) -> dict:
    """Pooled precision/recall/F1 after a confidence pre-filter.

    Predictions scoring below ``confidence_threshold`` are discarded before
    matching. Precision is 0 by convention when every prediction was
    discarded; F1 is 0 when precision and recall are both 0.
    """
    if det.n_gt == 0:
        raise NoGroundTruth("precision/recall need ground-truth boxes")
    tp_total = 0
    fp_total = 0
    for im in det.images:
        kept = im.pred[im.pred[:, 4] >= confidence_threshold]
        if len(kept) == 0:
            continue
        tp, _ = match_detections(im.gt, kept, iou_threshold)
        tp_total += int(tp.sum())
        fp_total += int(len(kept) - tp.sum())
    precision = tp_total / (tp_total + fp_total) if (tp_total + fp_total) > 0 else 0.0
    recall = tp_total / det.n_gt
    denom = precision + recall
    f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp_total, "fp": fp_total, "fn": det.n_gt - tp_total}
