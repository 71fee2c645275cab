"""Synthetic task generators and a budget-aware pseudo-trainer.

Everything here is seed-deterministic: the same config and seed produce
byte-identical prediction artifacts. Classifier scores follow a binormal
model (positive-class latents shifted so the expected AUC hits the target),
optionally contaminated by a shortcut: a binary flag co-occurring with the
label at configured rates, leaking into the score with configured strength.
Detection sets hit target recall/precision in expectation with location
jitter controlling box quality.

Strategy flags model the tuning surface. Each flag carries a real-valued
knob and a declared response: which quality targets it shifts, by how much,
per unit of knob. Responses live in the config, not in hidden constants, so
a run's implied quality is always inspectable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ..errors import InvalidTarget
from ..metrics.classification import ClassificationPredictions
from ..metrics.detection import DetectionPredictions, ImageDetections

_STREAM_IDS = {"val": 0, "test": 1, "train": 2}

CANVAS = 256


@dataclass(frozen=True)
class FlagSpec:
    """One strategy knob: its current value and declared metric responses."""

    value: float = 0.0
    responses: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ShortcutConfig:
    """A label-correlated artifact the simulated model can lean on.

    ``rate_pos``/``rate_neg`` are flag co-occurrence rates by class;
    ``reliance`` scales how strongly the flag leaks into the disease score;
    ``separation`` controls how well the synthetic flag classifier separates
    flagged from unflagged cases.
    """

    rate_pos: float = 0.6
    rate_neg: float = 0.1
    reliance: float = 0.8
    separation: float = 3.0


@dataclass(frozen=True)
class SimConfig:
    task_kind: str
    n_cases: int
    seed: int
    # classification targets
    target_auc: float = 0.75
    prevalence: float = 0.5
    class_names: tuple[str, ...] = ()
    priority_class_index: int | None = None
    # detection targets
    target_recall: float = 0.6
    target_precision: float = 0.8
    loc_noise: float = 0.1
    shortcut: ShortcutConfig | None = None
    strategy_flags: dict = field(default_factory=dict)  # name -> FlagSpec
    # trainer dynamics
    epoch_period_seconds: float = 0.5
    epochs: int = 10 ** 6
    noise_band: float = 0.01
    curve_start_delta: float = 0.12
    curve_tau: float = 2.0
    fail_mode: str = "none"
    # interpreter + import overhead the child plans around; the schedule must
    # be a pure function of the budget for run records to be reproducible
    startup_allowance_seconds: float = 0.8

    def validate(self) -> None:
        if self.n_cases < 2:
            raise InvalidTarget("n_cases must be at least 2")
        if not 0.5 < self.target_auc <= 0.995:
            raise InvalidTarget("target_auc must be in (0.5, 0.995]")
        if not 0.0 < self.prevalence < 1.0:
            raise InvalidTarget("prevalence must be in (0, 1)")
        if not 0.0 <= self.target_recall <= 1.0:
            raise InvalidTarget("target_recall must be in [0, 1]")
        if not 0.0 < self.target_precision <= 1.0:
            raise InvalidTarget("target_precision must be in (0, 1]")
        if self.loc_noise < 0.0:
            raise InvalidTarget("loc_noise must be >= 0")
        if self.shortcut is not None:
            s = self.shortcut
            for name, v in (("rate_pos", s.rate_pos), ("rate_neg", s.rate_neg),
                            ("reliance", s.reliance)):
                if not 0.0 <= v <= 1.0:
                    raise InvalidTarget(f"shortcut {name} must be in [0, 1]")
        if self.epoch_period_seconds <= 0.0:
            raise InvalidTarget("epoch_period_seconds must be positive")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "task_kind": self.task_kind,
            "n_cases": self.n_cases,
            "seed": self.seed,
            "target_auc": self.target_auc,
            "prevalence": self.prevalence,
            "class_names": list(self.class_names),
            "priority_class_index": self.priority_class_index,
            "target_recall": self.target_recall,
            "target_precision": self.target_precision,
            "loc_noise": self.loc_noise,
            "shortcut": None if self.shortcut is None else {
                "rate_pos": self.shortcut.rate_pos,
                "rate_neg": self.shortcut.rate_neg,
                "reliance": self.shortcut.reliance,
                "separation": self.shortcut.separation,
            },
            "strategy_flags": {
                name: {"value": f.value, "responses": dict(f.responses)}
                for name, f in self.strategy_flags.items()
            },
            "epoch_period_seconds": self.epoch_period_seconds,
            "epochs": self.epochs,
            "noise_band": self.noise_band,
            "curve_start_delta": self.curve_start_delta,
            "curve_tau": self.curve_tau,
            "fail_mode": self.fail_mode,
            "startup_allowance_seconds": self.startup_allowance_seconds,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        shortcut = d.get("shortcut")
        flags = {
            name: FlagSpec(value=float(f.get("value", 0.0)),
                           responses=dict(f.get("responses", {})))
            for name, f in (d.get("strategy_flags") or {}).items()
        }
        return cls(
            task_kind=str(d["task_kind"]),
            n_cases=int(d["n_cases"]),
            seed=int(d["seed"]),
            target_auc=float(d.get("target_auc", 0.75)),
            prevalence=float(d.get("prevalence", 0.5)),
            class_names=tuple(d.get("class_names") or ()),
            priority_class_index=d.get("priority_class_index"),
            target_recall=float(d.get("target_recall", 0.6)),
            target_precision=float(d.get("target_precision", 0.8)),
            loc_noise=float(d.get("loc_noise", 0.1)),
            shortcut=None if shortcut is None else ShortcutConfig(
                rate_pos=float(shortcut.get("rate_pos", 0.6)),
                rate_neg=float(shortcut.get("rate_neg", 0.1)),
                reliance=float(shortcut.get("reliance", 0.8)),
                separation=float(shortcut.get("separation", 3.0)),
            ),
            strategy_flags=flags,
            epoch_period_seconds=float(d.get("epoch_period_seconds", 0.5)),
            epochs=int(d.get("epochs", 10 ** 6)),
            noise_band=float(d.get("noise_band", 0.01)),
            curve_start_delta=float(d.get("curve_start_delta", 0.12)),
            curve_tau=float(d.get("curve_tau", 2.0)),
            fail_mode=str(d.get("fail_mode", "none")),
            startup_allowance_seconds=float(
                d.get("startup_allowance_seconds", 0.8)),
        )

    @classmethod
    def from_json_file(cls, path: Path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_json(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, v))


def _response_sum(cfg: SimConfig, channel: str) -> float:
    total = 0.0
    for f in cfg.strategy_flags.values():
        total += float(f.value) * float(f.responses.get(channel, 0.0))
    return total


@dataclass(frozen=True)
class EffectiveQuality:
    """Quality targets after applying every strategy flag's declared response."""

    auc: float
    per_class_auc: tuple[float, ...]
    rho: float
    recall: float
    precision: float
    loc_noise: float


def effective_quality(cfg: SimConfig) -> EffectiveQuality:
    auc = _clamp(cfg.target_auc + _response_sum(cfg, "auc"), 0.505, 0.995)
    k = max(len(cfg.class_names), 2)
    prio_shift = _response_sum(cfg, "priority_class_auc")
    per_class = []
    for i in range(k):
        v = cfg.target_auc + _response_sum(cfg, "auc")
        if cfg.priority_class_index is not None and i == cfg.priority_class_index:
            v += prio_shift
        per_class.append(_clamp(v, 0.505, 0.995))
    rho = 0.0
    if cfg.shortcut is not None:
        rho = _clamp(cfg.shortcut.reliance + _response_sum(cfg, "rho"), 0.0, 1.0)
    # Upper bound 1.0 is meaningful: recall 1.0 detects every box, precision
    # 1.0 yields a zero false-positive rate.  Only the floors guard degeneracy.
    recall = _clamp(cfg.target_recall + _response_sum(cfg, "recall"), 0.02, 1.0)
    precision = _clamp(cfg.target_precision + _response_sum(cfg, "precision"), 0.05, 1.0)
    loc_noise = _clamp(cfg.loc_noise + _response_sum(cfg, "loc_noise"), 0.0, 0.45)
    return EffectiveQuality(auc=auc, per_class_auc=tuple(per_class), rho=rho,
                            recall=recall, precision=precision, loc_noise=loc_noise)


def primary_metric_value(cfg: SimConfig) -> float:
    """The quality the trainer's learning curve saturates toward."""
    eff = effective_quality(cfg)
    if cfg.task_kind == "detection":
        return eff.recall * eff.precision ** 0.25  # crude AP-at-50 proxy
    if cfg.task_kind == "multiclass_classification":
        return float(np.mean(eff.per_class_auc))
    return eff.auc


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _rng_for(cfg: SimConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng((cfg.seed, _STREAM_IDS.get(stream, 9)))


def simulate_classifier_predictions(cfg: SimConfig, case_ids=None,
                                    stream: str = "val"):
    """Scores with a target AUC, plus confounder probabilities when shortcut is on.

    The binormal construction: negatives draw a standard-normal latent,
    positives add mu = sqrt(2) * PhiInverse(target) so the expected AUC equals
    the target exactly; the sigmoid squash to [0, 1] preserves ranks. With a
    shortcut, reliance * (flag - rate) is added to the latent before
    squashing, and a second latent produces the flag classifier's output.

    Returns (ClassificationPredictions, p_confounder-or-None).
    """
    cfg.validate()
    rng = _rng_for(cfg, stream)
    n = len(case_ids) if case_ids is not None else cfg.n_cases
    ids = tuple(case_ids) if case_ids is not None else tuple(
        f"{stream}_{i:06d}" for i in range(n))
    eff = effective_quality(cfg)

    if cfg.task_kind == "multiclass_classification":
        k = max(len(cfg.class_names), 2)
        labels = rng.integers(0, k, size=n)
        scores = np.empty((n, k))
        for j in range(k):
            mu = math.sqrt(2.0) * float(norm.ppf(eff.per_class_auc[j]))
            latent = rng.standard_normal(n) + mu * (labels == j)
            scores[:, j] = _sigmoid(latent)
        return ClassificationPredictions(ids, labels, scores), None

    labels = (rng.random(n) < cfg.prevalence).astype(int)
    mu = math.sqrt(2.0) * float(norm.ppf(eff.auc))
    latent = rng.standard_normal(n) + mu * labels
    p_conf = None
    if cfg.shortcut is not None:
        s = cfg.shortcut
        rate = np.where(labels == 1, s.rate_pos, s.rate_neg)
        flag = (rng.random(n) < rate).astype(float)
        latent = latent + eff.rho * (flag - rate)
        conf_latent = rng.standard_normal(n) + s.separation * (flag - 0.5)
        p_conf = _sigmoid(conf_latent)
    scores = _sigmoid(latent)
    return ClassificationPredictions(ids, labels, scores), p_conf


def simulate_detection_set(cfg: SimConfig, image_ids=None,
                           stream: str = "val") -> DetectionPredictions:
    """Boxes hitting target recall/precision in expectation.

    Each ground-truth box is detected with probability recall; a detected box
    is the ground truth shifted along one axis by round(loc_noise * side), so
    the IoU of true positives is controlled by loc_noise alone. False
    positives are injected at a Poisson rate calibrated to the precision
    target and kept clear of ground truth.
    """
    cfg.validate()
    rng = _rng_for(cfg, stream)
    n = len(image_ids) if image_ids is not None else cfg.n_cases
    ids = tuple(image_ids) if image_ids is not None else tuple(
        f"{stream}_{i:06d}" for i in range(n))
    eff = effective_quality(cfg)

    gt_counts = rng.integers(1, 4, size=n)
    fp_rate = float(eff.recall * gt_counts.mean() * (1.0 - eff.precision)
                    / eff.precision)
    images = []
    for i in range(n):
        gts = []
        for _ in range(int(gt_counts[i])):
            w = int(rng.integers(24, 64))
            h = int(rng.integers(24, 64))
            x1 = int(rng.integers(0, CANVAS - w))
            y1 = int(rng.integers(0, CANVAS - h))
            gts.append((float(x1), float(y1), float(x1 + w), float(y1 + h)))
        preds = []
        for (x1, y1, x2, y2) in gts:
            if rng.random() >= eff.recall:
                continue
            axis = int(rng.integers(0, 4))
            side = (x2 - x1) if axis < 2 else (y2 - y1)
            shift = float(round(eff.loc_noise * side))
            dx = (shift, -shift, 0.0, 0.0)[axis]
            dy = (0.0, 0.0, shift, -shift)[axis]
            score = float(rng.uniform(0.5, 1.0))
            preds.append((x1 + dx, y1 + dy, x2 + dx, y2 + dy, score))
        for _ in range(int(rng.poisson(fp_rate))):
            for _attempt in range(10):
                w = int(rng.integers(24, 64))
                h = int(rng.integers(24, 64))
                x1 = float(rng.integers(0, CANVAS - w))
                y1 = float(rng.integers(0, CANVAS - h))
                box = (x1, y1, x1 + w, y1 + h)
                if all(_iou_quick(box, g) < 0.3 for g in gts):
                    break
            score = float(rng.uniform(0.1, 0.9))
            preds.append((*box, score))
        images.append(ImageDetections(
            ids[i],
            np.array(gts, dtype=float).reshape(-1, 4),
            np.array(preds, dtype=float).reshape(-1, 5),
        ))
    return DetectionPredictions(tuple(images))


def _iou_quick(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / area


# --- spec-derived defaults ---------------------------------------------------

def default_flags_for(spec) -> dict:
    """The knob catalog a fresh mock workspace exposes, all at zero."""
    if spec.task_kind == "detection":
        return {
            "pseudo_labeling": FlagSpec(0.0, {"recall": 0.12}),
            "distributed_batch_size": FlagSpec(0.0, {"recall": 0.04}),
            "negative_ratio_curation": FlagSpec(0.0, {"precision": 0.05}),
            "label_smoothing_aug": FlagSpec(0.0, {"loc_noise": -0.04}),
        }
    if spec.confounders:
        return {
            "group_balanced_sampling": FlagSpec(0.0, {"rho": -0.25}),
            "gradient_reversal": FlagSpec(0.0, {"rho": -0.35, "auc": -0.01}),
            "mixup_label_smoothing": FlagSpec(0.0, {"rho": -0.10, "auc": 0.005}),
        }
    flags = {
        "focal_loss": FlagSpec(0.0, {"auc": 0.03}),
        "class_balanced_sampling": FlagSpec(0.0, {"auc": 0.02}),
        "mixup_label_smoothing": FlagSpec(0.0, {"auc": 0.01}),
    }
    if spec.priority_class is not None:
        flags["focal_loss"] = FlagSpec(0.0, {"auc": 0.02, "priority_class_auc": 0.04})
    return flags


def default_sim_config(spec, seed: int, n_cases: int = 400) -> SimConfig:
    """A plausible starting config for a task spec, used by mock workspaces."""
    shortcut = ShortcutConfig() if spec.confounders else None
    priority_idx = (spec.classes.index(spec.priority_class)
                    if spec.priority_class is not None else None)
    return SimConfig(
        task_kind=spec.task_kind,
        n_cases=n_cases,
        seed=seed,
        target_auc=0.70,
        class_names=tuple(spec.classes),
        priority_class_index=priority_idx,
        target_recall=0.50,
        target_precision=0.80,
        loc_noise=0.12,
        shortcut=shortcut,
        strategy_flags=default_flags_for(spec),
    )
