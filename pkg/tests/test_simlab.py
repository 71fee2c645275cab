"""Synthetic task models: calibration, determinism, knob responses, trainer."""
from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from intentloop.confound import ConfoundInput, cross_tabulate
from intentloop.errors import InvalidTarget
from intentloop.metrics.classification import roc_auc
from intentloop.metrics.detection import detection_prf, map_range
from intentloop.simlab import (
    FlagSpec,
    ShortcutConfig,
    SimConfig,
    default_flags_for,
    default_sim_config,
    effective_quality,
    primary_metric_value,
    simulate_classifier_predictions,
    simulate_detection_set,
)
from intentloop.stats import partial_correlation
from intentloop.workspace import ingest_record

from conftest import binary_spec, detection_spec


def _cfg(**kw) -> SimConfig:
    base = dict(task_kind="binary_classification", n_cases=400, seed=0)
    base.update(kw)
    return SimConfig(**base)


# -- config ---------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(InvalidTarget):
        _cfg(n_cases=1)
    with pytest.raises(InvalidTarget):
        _cfg(target_auc=0.4)
    with pytest.raises(InvalidTarget):
        _cfg(target_auc=0.999)
    with pytest.raises(InvalidTarget):
        _cfg(prevalence=0.0)
    with pytest.raises(InvalidTarget):
        _cfg(target_precision=0.0)
    with pytest.raises(InvalidTarget):
        _cfg(epoch_period_seconds=0.0)
    with pytest.raises(InvalidTarget):
        _cfg(shortcut=ShortcutConfig(rate_pos=1.2))


def test_config_round_trip_with_flags_and_shortcut(tmp_path):
    cfg = _cfg(shortcut=ShortcutConfig(rate_pos=0.55, rate_neg=0.05,
                                       reliance=0.7, separation=2.5),
               strategy_flags={
                   "gradient_reversal": FlagSpec(1.0, {"rho": -0.35,
                                                       "auc": -0.01}),
               },
               fail_mode="noisy", noise_band=0.02)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "config.json"
    cfg.write_json(path)
    assert SimConfig.from_json_file(path) == cfg


def test_effective_quality_applies_flag_responses():
    cfg = _cfg(target_auc=0.70, strategy_flags={
        "focal_loss": FlagSpec(1.0, {"auc": 0.03}),
        "mixup_label_smoothing": FlagSpec(0.5, {"auc": 0.01}),
    })
    q = effective_quality(cfg)
    assert q.auc == pytest.approx(0.70 + 0.03 + 0.005, abs=1e-12)
    # value 0 leaves the knob alone
    cfg0 = _cfg(target_auc=0.70, strategy_flags={
        "focal_loss": FlagSpec(0.0, {"auc": 0.03})})
    assert effective_quality(cfg0).auc == pytest.approx(0.70, abs=1e-12)


def test_effective_quality_clamps():
    q = effective_quality(_cfg(target_auc=0.99, strategy_flags={
        "boost": FlagSpec(1.0, {"auc": 0.5})}))
    assert q.auc == 0.995
    det = _cfg(task_kind="detection", target_recall=1.0,
               target_precision=1.0, loc_noise=0.0)
    qd = effective_quality(det)
    assert qd.recall == 1.0 and qd.precision == 1.0


def test_effective_quality_rho_needs_shortcut():
    no_shortcut = effective_quality(_cfg(strategy_flags={
        "gradient_reversal": FlagSpec(1.0, {"rho": -0.35})}))
    assert no_shortcut.rho == 0.0
    with_shortcut = effective_quality(_cfg(
        shortcut=ShortcutConfig(reliance=0.8),
        strategy_flags={"gradient_reversal": FlagSpec(1.0, {"rho": -0.35})}))
    assert with_shortcut.rho == pytest.approx(0.45, abs=1e-12)


def test_priority_class_response_targets_one_column():
    cfg = _cfg(task_kind="multiclass_classification",
               class_names=("melanoma", "other"), priority_class_index=0,
               target_auc=0.70,
               strategy_flags={"focal_loss": FlagSpec(
                   1.0, {"auc": 0.02, "priority_class_auc": 0.04})})
    q = effective_quality(cfg)
    assert q.per_class_auc[0] == pytest.approx(0.76, abs=1e-12)
    assert q.per_class_auc[1] == pytest.approx(0.72, abs=1e-12)


def test_default_flags_catalog_matches_task_kind():
    det_flags = default_flags_for(detection_spec())
    assert "pseudo_labeling" in det_flags
    assert all(f.value == 0.0 for f in det_flags.values())
    conf_spec = binary_spec(confounders=(
        __import__("intentloop.task_model", fromlist=["ConfounderSpec"])
        .ConfounderSpec(name="chest_drain"),))
    conf_flags = default_flags_for(conf_spec)
    assert "gradient_reversal" in conf_flags


def test_default_sim_config_enables_shortcut_only_with_confounders():
    from intentloop.task_model import ConfounderSpec
    plain = default_sim_config(binary_spec(), seed=3)
    assert plain.shortcut is None
    confounded = default_sim_config(
        binary_spec(confounders=(ConfounderSpec(name="drain"),)), seed=3)
    assert confounded.shortcut is not None


# -- classifier simulation ---------------------------------------------------------

def test_midline_target_gives_chance_auc():
    cfg = _cfg(target_auc=0.505, n_cases=10_000, seed=21)
    preds, _ = simulate_classifier_predictions(cfg)
    assert roc_auc(preds.labels, preds.scores) == pytest.approx(0.5, abs=0.02)


def test_calibration_single_seeds():
    for seed in (0, 1, 2):
        cfg = _cfg(target_auc=0.90, n_cases=10_000, seed=seed)
        preds, _ = simulate_classifier_predictions(cfg)
        assert roc_auc(preds.labels, preds.scores) == pytest.approx(
            0.90, abs=0.02)


def test_simulation_is_deterministic_per_config():
    cfg = _cfg(seed=9)
    a, _ = simulate_classifier_predictions(cfg)
    b, _ = simulate_classifier_predictions(cfg)
    assert a.case_ids == b.case_ids
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.scores, b.scores)


def test_streams_differ_but_share_config():
    cfg = _cfg(seed=9)
    val, _ = simulate_classifier_predictions(cfg, stream="val")
    test, _ = simulate_classifier_predictions(cfg, stream="test")
    assert not np.array_equal(val.scores, test.scores)


def test_shortcut_rates_and_confounder_column():
    cfg = _cfg(n_cases=10_000, seed=4,
               shortcut=ShortcutConfig(rate_pos=0.6, rate_neg=0.1,
                                       reliance=0.8))
    preds, p_conf = simulate_classifier_predictions(cfg)
    assert p_conf is not None and len(p_conf) == len(preds.labels)
    rates = cross_tabulate(ConfoundInput(
        case_ids=preds.case_ids, y_true=preds.labels,
        p_disease=preds.scores, p_confounder=p_conf))
    assert rates["rate_flag_pos"] == pytest.approx(0.6, abs=0.03)
    assert rates["rate_flag_neg"] == pytest.approx(0.1, abs=0.03)


def test_zero_reliance_has_no_partial_correlation():
    cfg = _cfg(n_cases=10_000, seed=17,
               shortcut=ShortcutConfig(rate_pos=0.6, rate_neg=0.1,
                                       reliance=0.0))
    preds, p_conf = simulate_classifier_predictions(cfg)
    partial = partial_correlation(preds.scores, p_conf, preds.labels)
    assert partial == pytest.approx(0.0, abs=0.05)


def test_reliance_flag_reduces_partial_correlation():
    base = _cfg(n_cases=6_000, seed=11,
                shortcut=ShortcutConfig(rate_pos=0.6, rate_neg=0.1,
                                        reliance=0.8))
    debias = SimConfig.from_dict({**base.to_dict(), "strategy_flags": {
        "gradient_reversal": {"value": 1.0,
                              "responses": {"rho": -0.5}}}})
    p0, c0 = simulate_classifier_predictions(base)
    p1, c1 = simulate_classifier_predictions(debias)
    r0 = partial_correlation(p0.scores, c0, p0.labels)
    r1 = partial_correlation(p1.scores, c1, p1.labels)
    assert r1 < r0


# -- detection simulation ----------------------------------------------------------

def test_detection_recall_calibration():
    cfg = _cfg(task_kind="detection", n_cases=1_000, seed=6,
               target_recall=0.5, target_precision=0.8, loc_noise=0.0)
    det = simulate_detection_set(cfg)
    assert det.n_gt >= 1_000  # 1..3 boxes per image
    out = detection_prf(det, iou_threshold=0.5)
    assert out["recall"] == pytest.approx(0.5, abs=0.05)
    assert out["precision"] == pytest.approx(0.8, abs=0.05)


def test_perfect_detector_reaches_exact_ceiling():
    cfg = _cfg(task_kind="detection", n_cases=150, seed=7,
               target_recall=1.0, target_precision=1.0, loc_noise=0.0)
    out = map_range(simulate_detection_set(cfg))
    assert out["map50"] == 1.0
    assert out["map50_95"] == 1.0


def test_jitter_separates_map50_from_strict_band():
    cfg = _cfg(task_kind="detection", n_cases=400, seed=8,
               target_recall=0.95, target_precision=0.95, loc_noise=0.25)
    out = map_range(simulate_detection_set(cfg))
    assert out["map50"] > 0.6
    assert out["map50_95"] < 0.55
    assert out["map50_95"] < out["map50"]


def test_primary_metric_value_by_kind():
    assert primary_metric_value(_cfg(target_auc=0.8)) == pytest.approx(
        0.8, abs=1e-12)
    det = _cfg(task_kind="detection", target_recall=0.6, target_precision=0.8)
    assert primary_metric_value(det) == pytest.approx(
        0.6 * 0.8 ** 0.25, abs=1e-12)


# -- pseudo-trainer subprocess -------------------------------------------------------

def _run_trainer(tmp_path: Path, cfg: SimConfig, budget: float,
                 split: str = "val", run_index: int = 0,
                 case_list: Path | None = None):
    cfg.write_json(tmp_path / "config.json")
    lists = tmp_path / "lists"
    lists.mkdir(exist_ok=True)
    val_list = lists / "val.csv"
    val_list.write_text("case_id,annotation\n" + "\n".join(
        f"val_{i:06d},image_level" for i in range(cfg.n_cases)) + "\n")
    argv = [sys.executable, "-m", "intentloop.simlab.trainer",
            "--config", str(tmp_path / "config.json"),
            "--budget-secs", str(budget),
            "--run-index", str(run_index),
            "--out", str(tmp_path / "artifacts"),
            "--val-list", str(val_list),
            "--split", split]
    if case_list is not None:
        argv += ["--case-list", str(case_list)]
    return subprocess.run(argv, capture_output=True, text=True,
                          timeout=budget + 30, cwd=tmp_path)


def _records(stdout: str):
    out = []
    malformed = 0
    for line in stdout.splitlines():
        rec = ingest_record(line)
        if rec is None:
            malformed += 1
        else:
            out.append(rec)
    return out, malformed


def test_trainer_emits_schedule_and_artifacts(tmp_path):
    cfg = _cfg(n_cases=60, seed=3, epoch_period_seconds=0.1,
               startup_allowance_seconds=0.2, noise_band=0.0,
               curve_start_delta=0.1, curve_tau=1.0)
    proc = _run_trainer(tmp_path, cfg, budget=1.5)
    assert proc.returncode == 0
    records, malformed = _records(proc.stdout)
    # usable = 1.5 - 0.25 - 0.2 = 1.05 -> 10 epochs of 0.1
    val = [r for r in records if r.split == "val" and r.name == "auc"]
    assert len(val) == 10
    assert malformed == 0
    # curve approaches the configured quality from below
    assert val[-1].value == pytest.approx(primary_metric_value(cfg), abs=1e-9)
    assert val[0].value < val[-1].value
    assert (tmp_path / "artifacts" / "val_predictions.csv").exists()


def test_trainer_epoch_count_scales_with_budget(tmp_path):
    cfg = _cfg(n_cases=40, seed=3, epoch_period_seconds=0.1,
               startup_allowance_seconds=0.2, noise_band=0.0)
    full = _run_trainer(tmp_path, cfg, budget=1.5)
    half = _run_trainer(tmp_path, cfg, budget=0.85)
    n_full = len([r for r in _records(full.stdout)[0] if r.split == "val"])
    n_half = len([r for r in _records(half.stdout)[0] if r.split == "val"])
    assert n_half < n_full


def test_trainer_crash_mode(tmp_path):
    cfg = _cfg(n_cases=40, seed=3, fail_mode="crash")
    proc = _run_trainer(tmp_path, cfg, budget=2.0)
    assert proc.returncode == 3
    records, malformed = _records(proc.stdout)
    assert records == [] and malformed >= 1
    assert proc.stderr != ""


def test_trainer_silent_mode_emits_nothing(tmp_path):
    cfg = _cfg(n_cases=40, seed=3, fail_mode="silent",
               epoch_period_seconds=0.1, startup_allowance_seconds=0.2)
    proc = _run_trainer(tmp_path, cfg, budget=1.0)
    assert proc.returncode == 0
    records, _ = _records(proc.stdout)
    assert records == []
    assert not (tmp_path / "artifacts" / "val_predictions.csv").exists()


def test_trainer_noisy_mode_keeps_valid_records(tmp_path):
    cfg = _cfg(n_cases=40, seed=3, fail_mode="noisy",
               epoch_period_seconds=0.1, startup_allowance_seconds=0.2,
               noise_band=0.0)
    proc = _run_trainer(tmp_path, cfg, budget=1.0)
    assert proc.returncode == 0
    records, malformed = _records(proc.stdout)
    assert malformed > 0  # prose lines and NaN records are dropped
    assert any(r.split == "val" and r.name == "auc" for r in records)


def test_trainer_test_split_freezes_and_writes_both(tmp_path):
    case_list = tmp_path / "cases.csv"
    case_list.write_text("case_id\n" + "\n".join(
        f"test_{i:06d}" for i in range(30)) + "\n")
    cfg = _cfg(n_cases=30, seed=3)
    proc = _run_trainer(tmp_path, cfg, budget=5.0, split="test",
                        case_list=case_list)
    assert proc.returncode == 0
    records, _ = _records(proc.stdout)
    assert len([r for r in records if r.split == "val"]) == 1
    assert (tmp_path / "artifacts" / "val_predictions.csv").exists()
    assert (tmp_path / "artifacts" / "test_predictions.csv").exists()


def test_trainer_test_split_requires_case_list(tmp_path):
    cfg = _cfg(n_cases=30, seed=3)
    proc = _run_trainer(tmp_path, cfg, budget=2.0, split="test")
    assert proc.returncode == 2
