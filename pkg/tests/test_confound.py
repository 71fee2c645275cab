"""Shortcut-reliance audit: rates, attribution, medians, rendering."""
from __future__ import annotations

import numpy as np
import pytest

import oracles
from intentloop.confound import (
    ConfoundInput,
    confound_report,
    cross_tabulate,
    format_percent,
    fp_attribution,
    render_confound_text,
    subgroup_medians,
)
from intentloop.errors import NoFalsePositives, SingleClassInput


def _inp(y, p_disease, p_conf, threshold=0.5):
    n = len(y)
    return ConfoundInput(case_ids=tuple(f"c{i}" for i in range(n)),
                         y_true=np.asarray(y, dtype=int),
                         p_disease=np.asarray(p_disease, dtype=float),
                         p_confounder=np.asarray(p_conf, dtype=float),
                         flag_threshold=threshold)


def test_format_percent_one_decimal():
    assert format_percent(0.4583333333333333) == "45.8%"
    assert format_percent(0.20895522388059692) == "20.9%"
    assert format_percent(0.0) == "0.0%"
    assert format_percent(1.0) == "100.0%"


def test_cross_tabulate_worked_example():
    out = cross_tabulate(_inp([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.2],
                              [0.9, 0.1, 0.8, 0.2]))
    assert out["rate_flag_pos"] == 0.5
    assert out["rate_flag_neg"] == 0.5


def test_cross_tabulate_single_class_raises():
    with pytest.raises(SingleClassInput):
        cross_tabulate(_inp([1, 1], [0.9, 0.8], [0.9, 0.1]))


def test_fp_attribution_counts_flagged_share():
    # Negatives at 0.7/0.6 score above threshold 0.5 -> 2 FPs, one flagged.
    inp = _inp([1, 0, 0, 0], [0.9, 0.7, 0.6, 0.1], [0.1, 0.9, 0.2, 0.8])
    assert fp_attribution(inp, 0.5) == 0.5


def test_fp_attribution_none_raises():
    inp = _inp([1, 0], [0.9, 0.1], [0.5, 0.5])
    with pytest.raises(NoFalsePositives):
        fp_attribution(inp, 0.5)


def test_subgroup_medians_cells_and_empty():
    inp = _inp([0, 0, 0, 1, 1], [0.1, 0.3, 0.6, 0.8, 0.9],
               [0.1, 0.2, 0.9, 0.9, 0.8])
    med = subgroup_medians(inp)
    assert med["y0_flag0"] == oracles.median_oracle([0.1, 0.3])
    assert med["y0_flag1"] == 0.6
    assert med["y1_flag0"] is None
    assert med["y1_flag1"] == oracles.median_oracle([0.8, 0.9])


def test_flag_threshold_controls_binarization():
    inp_low = _inp([1, 0], [0.9, 0.2], [0.4, 0.4], threshold=0.3)
    inp_high = _inp([1, 0], [0.9, 0.2], [0.4, 0.4], threshold=0.5)
    assert cross_tabulate(inp_low)["rate_flag_pos"] == 1.0
    assert cross_tabulate(inp_high)["rate_flag_pos"] == 0.0


def test_confound_input_validation():
    from intentloop.errors import LengthMismatch
    with pytest.raises(LengthMismatch):
        _inp([], [], [])
    with pytest.raises(ValueError):
        _inp([0, 1], [0.5, 1.5], [0.5, 0.5])
    with pytest.raises(LengthMismatch):
        ConfoundInput(case_ids=("a",), y_true=np.array([0, 1]),
                      p_disease=np.array([0.5, 0.5]),
                      p_confounder=np.array([0.5, 0.5]))


def _synthetic_confounded(n=400, rho=0.6, seed=5):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    flag = rng.random(n) < np.where(y == 1, 0.7, 0.2)
    latent = rng.normal(size=n) + 1.2 * y + rho * (flag - 0.4)
    p_disease = 1.0 / (1.0 + np.exp(-latent))
    p_conf = np.where(flag, 0.9, 0.1)
    return y, p_disease, p_conf


def test_confound_report_structure_and_reductions():
    y, pd_hi, pc = _synthetic_confounded(rho=1.5)
    _, pd_lo, _ = _synthetic_confounded(rho=0.0)
    current = _inp(y, pd_lo, pc)
    base = _inp(y, pd_hi, pc)
    report = confound_report(current, baseline=base)
    assert report.baseline is not None
    assert set(report.reductions) == {"raw_correlation", "partial_correlation"}
    # Reductions recompute exactly from the unrounded stored values.
    for key, cur in (("raw_correlation", report.raw_correlation),
                     ("partial_correlation", report.partial_correlation)):
        expect = (report.baseline[key] - cur) / report.baseline[key]
        assert report.reductions[key] == pytest.approx(expect, abs=0.0)
    assert report.to_dict()["rate_flag_pos"] == report.rate_flag_pos


def test_confound_report_default_threshold_is_youden():
    from intentloop.stats import youden_threshold
    y, p_disease, pc = _synthetic_confounded()
    inp = _inp(y, p_disease, pc)
    report = confound_report(inp)
    assert report.fp_threshold == youden_threshold(y, p_disease)["threshold"]
    assert report.baseline is None and report.reductions == {}


def test_render_worked_example_bytes():
    inp = _inp([0, 0, 0, 1, 1, 1],
               [0.2, 0.6, 0.7, 0.4, 0.8, 0.9],
               [0.1, 0.9, 0.8, 0.2, 0.9, 0.7])
    report = confound_report(inp, threshold=0.5)
    text = render_confound_text(report)
    lines = text.split("\n")
    assert lines[0] == "flag co-occurrence"
    assert lines[1] == "  rate(flag | y=1): 66.7%"
    assert lines[2] == "  rate(flag | y=0): 66.7%"
    assert lines[3] == "false-positive attribution"
    assert lines[4] == ("  flagged share of false positives: 100.0% "
                        "(threshold 0.5000)")
    assert lines[5] == "score distribution and correlation"
    assert lines[6] == "  median score y0_flag0: 0.2000"
    assert lines[7] == "  median score y0_flag1: 0.6500"
    assert lines[8] == "  median score y1_flag0: 0.4000"
    assert lines[9] == "  median score y1_flag1: 0.8500"
    assert lines[10].startswith("  raw correlation: ")
    assert lines[11].startswith("  partial correlation (control y): ")


def test_render_baseline_panel_reduction_percentages():
    # Reduction strings come from unrounded ratios: 0.67->0.53 is 20.9%.
    y, pd_hi, pc = _synthetic_confounded(rho=2.0)
    _, pd_lo, _ = _synthetic_confounded(rho=0.2)
    report = confound_report(_inp(y, pd_lo, pc), baseline=_inp(y, pd_hi, pc))
    text = render_confound_text(report)
    assert "versus baseline" in text
    expected_raw = format_percent(report.reductions["raw_correlation"])
    assert f"({expected_raw} lower)" in text


def test_render_no_false_positives_line():
    inp = _inp([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9], [0.3, 0.6, 0.4, 0.7])
    report = confound_report(inp, threshold=0.5)
    assert report.fp_flagged_fraction is None
    assert ("  no false positives at threshold 0.5000"
            in render_confound_text(report))
