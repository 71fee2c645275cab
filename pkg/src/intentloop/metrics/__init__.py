"""Evaluation metrics for classification and detection tasks."""

from .classification import (
    ClassificationPredictions,
    confusion_at_threshold,
    macro_argmax_f1,
    macro_ovr_auc,
    multiclass_summary,
    roc_auc,
    sensitivity_at_specificity,
    threshold_scan,
)
from .detection import (
    MAP_RANGE_THRESHOLDS,
    DetectionPredictions,
    ImageDetections,
    average_precision,
    detection_prf,
    iou,
    map_range,
    match_detections,
)

__all__ = [
    "ClassificationPredictions",
    "DetectionPredictions",
    "ImageDetections",
    "MAP_RANGE_THRESHOLDS",
    "average_precision",
    "confusion_at_threshold",
    "detection_prf",
    "iou",
    "macro_argmax_f1",
    "macro_ovr_auc",
    "map_range",
    "match_detections",
    "multiclass_summary",
    "roc_auc",
    "sensitivity_at_specificity",
    "threshold_scan",
]
