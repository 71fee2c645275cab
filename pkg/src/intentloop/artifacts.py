"""Prediction-artifact files exchanged between child runs and the harness.

Classification predictions travel as CSV: ``case_id,label,score`` for binary
tasks, ``case_id,label,score_<class>...`` (one column per class) for
multiclass. Detections travel as NDJSON, one image per line:
``{"image_id": ..., "gt": [{"x1","y1","x2","y2"}...], "pred": [{... ,"score"}...]}``
with pixel coordinates, x1 < x2 and y1 < y2. Confounder probabilities travel
as ``case_id,p_confounder`` CSV. Floats are written with repr precision so a
rerun with the same seed produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics.classification import ClassificationPredictions
from .metrics.detection import DetectionPredictions, ImageDetections
from .metrics.registry import ArtifactSet

CLASSIFICATION_BASENAME = "predictions.csv"
DETECTION_BASENAME = "detections.ndjson"
CONFOUNDER_BASENAME = "confounder.csv"


def write_classification_csv(path: Path, preds: ClassificationPredictions,
                             class_names=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    multi = preds.scores.ndim == 2
    if multi and class_names is None:
        class_names = [str(k) for k in range(preds.scores.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if multi:
            w.writerow(["case_id", "label"] + [f"score_{c}" for c in class_names])
            for i, cid in enumerate(preds.case_ids):
                w.writerow([cid, int(preds.labels[i])]
                           + [repr(float(v)) for v in preds.scores[i]])
        else:
            w.writerow(["case_id", "label", "score"])
            for i, cid in enumerate(preds.case_ids):
                w.writerow([cid, int(preds.labels[i]), repr(float(preds.scores[i]))])


def read_classification_csv(path: Path) -> ClassificationPredictions:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    case_ids = tuple(r[0] for r in body)
    labels = np.array([int(r[1]) for r in body])
    if header[2:] == ["score"]:
        scores = np.array([float(r[2]) for r in body])
    else:
        scores = np.array([[float(v) for v in r[2:]] for r in body])
    return ClassificationPredictions(case_ids, labels, scores)


def classification_class_names(path: Path) -> list[str] | None:
    """Class-name order from a multiclass CSV header, None for binary."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    if header[2:] == ["score"]:
        return None
    return [c.removeprefix("score_") for c in header[2:]]


def write_detection_ndjson(path: Path, det: DetectionPredictions) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for im in det.images:
            rec = {
                "image_id": im.image_id,
                "gt": [{"x1": float(b[0]), "y1": float(b[1]),
                        "x2": float(b[2]), "y2": float(b[3])} for b in im.gt],
                "pred": [{"x1": float(p[0]), "y1": float(p[1]),
                          "x2": float(p[2]), "y2": float(p[3]),
                          "score": float(p[4])} for p in im.pred],
            }
            fh.write(json.dumps(rec) + "\n")


def read_detection_ndjson(path: Path) -> DetectionPredictions:
    images = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            gt = np.array([[b["x1"], b["y1"], b["x2"], b["y2"]]
                           for b in rec.get("gt", [])], dtype=float).reshape(-1, 4)
            pred = np.array([[p["x1"], p["y1"], p["x2"], p["y2"], p["score"]]
                             for p in rec.get("pred", [])], dtype=float).reshape(-1, 5)
            images.append(ImageDetections(str(rec["image_id"]), gt, pred))
    return DetectionPredictions(tuple(images))


def write_confounder_csv(path: Path, case_ids, probabilities) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case_id", "p_confounder"])
        for cid, p in zip(case_ids, probabilities):
            w.writerow([cid, repr(float(p))])


def read_confounder_csv(path: Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return {r[0]: float(r[1]) for r in rows[1:]}


def split_paths(artifacts_dir: Path, split: str) -> dict[str, Path]:
    base = Path(artifacts_dir)
    return {
        "classification": base / f"{split}_{CLASSIFICATION_BASENAME}",
        "detection": base / f"{split}_{DETECTION_BASENAME}",
        "confounder": base / f"{split}_{CONFOUNDER_BASENAME}",
    }


def load_artifact_set(artifacts_dir: Path, split: str) -> ArtifactSet | None:
    """Parse whatever artifacts a run left for one split; None if nothing."""
    paths = split_paths(artifacts_dir, split)
    classification = None
    detection = None
    confounder = None
    if paths["classification"].exists():
        classification = read_classification_csv(paths["classification"])
    if paths["detection"].exists():
        detection = read_detection_ndjson(paths["detection"])
    if classification is not None and paths["confounder"].exists():
        by_case = read_confounder_csv(paths["confounder"])
        if all(cid in by_case for cid in classification.case_ids):
            confounder = np.array([by_case[cid] for cid in classification.case_ids])
    if classification is None and detection is None:
        return None
    return ArtifactSet(classification=classification, detection=detection,
                       confounder=confounder)
