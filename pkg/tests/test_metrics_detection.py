"""Box matching and AP: worked examples, oracle parity, tie conventions."""
from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from intentloop.errors import DegenerateBox, NoGroundTruth
from intentloop.metrics.detection import (
    MAP_RANGE_THRESHOLDS,
    DetectionPredictions,
    ImageDetections,
    average_precision,
    detection_prf,
    iou,
    map_range,
    match_detections,
)


def _det(images):
    packed = []
    for i, (gt, preds) in enumerate(images):
        packed.append(ImageDetections(
            image_id=f"im{i}",
            gt=np.asarray(gt, dtype=float).reshape(-1, 4),
            pred=np.asarray(preds, dtype=float).reshape(-1, 5)))
    return DetectionPredictions(images=tuple(packed))


def test_iou_worked_example():
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)


def test_iou_disjoint_and_identical():
    assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0
    assert iou((0, 0, 3, 4), (0, 0, 3, 4)) == 1.0


def test_iou_degenerate_box_raises():
    with pytest.raises(DegenerateBox):
        iou((0, 0, 0, 2), (1, 1, 3, 3))
    with pytest.raises(DegenerateBox):
        iou((0, 0, 2, 2), (1, 3, 3, 1))


def test_match_confidence_order_beats_input_order():
    gt = [(0, 0, 10, 10)]
    # Lower-confidence pred listed first; higher-confidence one must claim.
    preds = [(0, 0, 10, 10, 0.3), (0, 0, 10, 10, 0.9)]
    tp, matched = match_detections(gt, preds, 0.5)
    assert list(tp) == [False, True]
    assert list(matched) == [True]


def test_match_confidence_tie_keeps_input_order():
    gt = [(0, 0, 10, 10)]
    preds = [(0, 0, 10, 10, 0.5), (0, 0, 10, 10, 0.5)]
    tp, _ = match_detections(gt, preds, 0.5)
    assert list(tp) == [True, False]


def test_match_iou_tie_takes_lowest_gt_index():
    # Two identical gts; one pred overlaps both equally.
    gt = [(0, 0, 10, 10), (0, 0, 10, 10)]
    preds = [(0, 0, 10, 10, 0.9)]
    tp, matched = match_detections(gt, preds, 0.5)
    assert list(tp) == [True]
    assert list(matched) == [True, False]


def test_match_below_threshold_does_not_consume_gt():
    gt = [(0, 0, 10, 10)]
    # IoU 1/7-ish, below 0.5: no claim, gt stays free for the next pred.
    preds = [(8, 8, 18, 18, 0.9), (0, 0, 10, 10, 0.1)]
    tp, matched = match_detections(gt, preds, 0.5)
    assert list(tp) == [False, True]
    assert list(matched) == [True]


def test_ap_worked_examples():
    gt = [(0, 0, 10, 10)]
    far = (100, 100, 110, 110)
    assert average_precision(
        _det([(gt, [(0, 0, 10, 10, 0.9), (*far, 0.8)])]), 0.5) == 1.0
    assert average_precision(
        _det([(gt, [(0, 0, 10, 10, 0.8), (*far, 0.9)])]), 0.5) == 0.5
    assert average_precision(_det([(gt, [(*far, 0.9)])]), 0.5) == 0.0


def test_ap_no_predictions_is_zero():
    assert average_precision(_det([([(0, 0, 5, 5)], [])]), 0.5) == 0.0


def test_ap_no_ground_truth_raises():
    with pytest.raises(NoGroundTruth):
        average_precision(_det([([], [(0, 0, 5, 5, 0.9)])]), 0.5)


def test_map_range_thresholds_cover_50_to_95():
    assert MAP_RANGE_THRESHOLDS[0] == 0.5
    assert MAP_RANGE_THRESHOLDS[-1] == 0.95
    assert len(MAP_RANGE_THRESHOLDS) == 10


def test_map_range_iou_060_worked_example():
    # Single detection at IoU exactly 0.60: counts at 0.50/0.55/0.60 only.
    det = _det([([(0, 0, 10, 10)], [(2.5, 0, 12.5, 10, 0.9)])])
    out = map_range(det)
    assert out["map50"] == 1.0
    assert out["map50_95"] == pytest.approx(0.3, abs=1e-15)


def test_detection_prf_confidence_prefilter():
    gt = [(0, 0, 10, 10)]
    preds = [(0, 0, 10, 10, 0.9), (100, 100, 110, 110, 0.2)]
    loose = detection_prf(_det([(gt, preds)]), confidence_threshold=0.0)
    tight = detection_prf(_det([(gt, preds)]), confidence_threshold=0.5)
    assert (loose["tp"], loose["fp"], loose["fn"]) == (1, 1, 0)
    assert (tight["tp"], tight["fp"], tight["fn"]) == (1, 0, 0)
    assert tight["precision"] == 1.0 and tight["f1"] == 1.0


def test_detection_prf_all_filtered_precision_zero():
    out = detection_prf(_det([([(0, 0, 5, 5)], [(0, 0, 5, 5, 0.1)])]),
                        confidence_threshold=0.9)
    assert out["precision"] == 0.0 and out["recall"] == 0.0 and out["f1"] == 0.0


def _random_images(rng: random.Random):
    images = []
    total_gt = 0
    for _ in range(rng.randrange(1, 4)):
        gts = []
        for _ in range(rng.randrange(0, 4)):
            x1, y1 = rng.randrange(0, 20), rng.randrange(0, 20)
            gts.append((x1, y1, x1 + rng.randrange(1, 12),
                        y1 + rng.randrange(1, 12)))
        preds = []
        for _ in range(rng.randrange(0, 4)):
            x1, y1 = rng.randrange(0, 20), rng.randrange(0, 20)
            preds.append((x1, y1, x1 + rng.randrange(1, 12),
                          y1 + rng.randrange(1, 12),
                          rng.randrange(0, 65) / 64.0))
        total_gt += len(gts)
        images.append((gts, preds))
    return images, total_gt


def test_oracle_parity_sweep():
    rng = random.Random(555)
    done = 0
    while done < 250:
        images, total_gt = _random_images(rng)
        if total_gt == 0:
            continue
        done += 1
        det = _det(images)
        thr = rng.choice([0.3, 0.5, 0.75])
        for (gts, preds), im in zip(images, det.images):
            tp_o, m_o = oracles.greedy_match(gts, preds, thr)
            tp_p, m_p = match_detections(im.gt, im.pred, thr)
            assert list(tp_p) == tp_o and list(m_p) == m_o
        assert average_precision(det, thr) == pytest.approx(
            oracles.ap_101(images, thr), abs=1e-12)
        got = detection_prf(det, iou_threshold=thr,
                            confidence_threshold=rng.choice([0.0, 0.25, 0.5]))
        # prf rerun with the matching oracle settings
        want = oracles.prf_oracle(images, thr, 0.0)
        got0 = detection_prf(det, iou_threshold=thr, confidence_threshold=0.0)
        for key in ("tp", "fp", "fn"):
            assert got0[key] == want[key]
        assert set(got) == {"precision", "recall", "f1", "tp", "fp", "fn"}


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_iou_symmetry_and_range(data):
    def box(d):
        x1 = d.draw(st.integers(0, 30))
        y1 = d.draw(st.integers(0, 30))
        return (x1, y1, x1 + d.draw(st.integers(1, 20)),
                y1 + d.draw(st.integers(1, 20)))
    a, b = box(data), box(data)
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou(a, a) == 1.0


def test_container_validation():
    with pytest.raises(DegenerateBox):
        ImageDetections(image_id="x",
                        gt=np.array([[0, 0, 0, 5]], dtype=float),
                        pred=np.zeros((0, 5)))
    with pytest.raises(ValueError):
        ImageDetections(image_id="x", gt=np.zeros((0, 4)),
                        pred=np.array([[0, 0, 5, 5, 1.5]], dtype=float))
