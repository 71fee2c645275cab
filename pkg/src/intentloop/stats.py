"""Bootstrap inference, threshold selection and correlation analysis.

Bootstrap resampling is case-level: indices into the evaluation set are drawn
with replacement and the metric is recomputed on each resample. Replicate r
always uses its own RNG stream derived from (seed, r), so results do not
depend on evaluation order and are reproducible for a fixed config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CaseMismatch,
    LengthMismatch,
    MetricUndefined,
    MetricUndefinedOnData,
    RedrawCapExceeded,
    ZeroResidualVariance,
    ZeroVariance,
)
from .metrics.classification import threshold_scan


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 2000
    level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    lo: float
    hi: float


def format_ci(point: float, lo: float, hi: float) -> str:
    """Render "point [lo, hi]" at four decimal places, e.g. "0.8422 [0.8296, 0.8545]"."""
    return f"{point:.4f} [{lo:.4f}, {hi:.4f}]"


def _take(data, idx):
    if hasattr(data, "subset"):
        return data.subset(idx)
    if isinstance(data, np.ndarray):
        return data[idx]
    return [data[int(i)] for i in idx]


def _case_keys(data):
    if hasattr(data, "case_ids"):
        return tuple(data.case_ids)
    return ("len", len(data))


def _replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng((int(seed), int(r)))


def _replicate_values(data, metric, cfg: BootstrapConfig, paired_with=None):
    """Metric values over B resamples; undefined replicates are redrawn.

    Redraws come from the same per-replicate stream; the total number of index
    draws across all replicates is capped at 10x the replicate count.
    """
    n = len(data)
    budget = 10 * cfg.replicates
    draws = 0
    out = np.empty(cfg.replicates, dtype=float)
    out_b = np.empty(cfg.replicates, dtype=float) if paired_with is not None else None
    for r in range(cfg.replicates):
        rng = _replicate_rng(cfg.seed, r)
        while True:
            draws += 1
            if draws > budget:
                raise RedrawCapExceeded(
                    f"exceeded {budget} resampling draws; metric undefined too often")
            idx = rng.integers(0, n, size=n)
            try:
                va = metric(_take(data, idx))
                if paired_with is not None:
                    vb = metric(_take(paired_with, idx))
            except MetricUndefined:
                continue
            out[r] = va
            if out_b is not None:
                out_b[r] = vb
            break
    return (out, out_b) if paired_with is not None else out


def bootstrap_ci(data, metric, cfg: BootstrapConfig = BootstrapConfig()) -> ConfidenceInterval:
    """Percentile bootstrap confidence interval for metric(data).

    ``data`` needs len() plus positional indexing (a ``subset`` method, numpy
    indexing, or sequence access). Raises MetricUndefinedOnData when the
    metric is undefined on the full sample.
    """
    try:
        point = float(metric(data))
    except MetricUndefined as exc:
        raise MetricUndefinedOnData(str(exc)) from exc
    vals = _replicate_values(data, metric, cfg)
    alpha = (1.0 - cfg.level) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    return ConfidenceInterval(point, float(lo), float(hi))


def paired_bootstrap_test(data_a, data_b, metric,
                          cfg: BootstrapConfig = BootstrapConfig()) -> float:
    """Two-sided paired bootstrap p-value for metric(A) - metric(B).

    Both sets are resampled jointly (same indices per replicate). The p-value
    is 2 * min(frac(delta <= 0), frac(delta >= 0)), floored at 1/B and capped
    at 1. Identical inputs therefore land on the cap, and a metric that is
    strictly larger on A in every replicate lands on the floor.
    """
    if _case_keys(data_a) != _case_keys(data_b):
        raise CaseMismatch("paired test needs identical case ids in both sets")
    va, vb = _replicate_values(data_a, metric, cfg, paired_with=data_b)
    delta = va - vb
    frac_le = float(np.mean(delta <= 0.0))
    frac_ge = float(np.mean(delta >= 0.0))
    p = 2.0 * min(frac_le, frac_ge)
    return min(1.0, max(p, 1.0 / cfg.replicates))


def youden_threshold(labels, scores) -> dict:
    """Observed threshold maximizing sensitivity + specificity - 1.

    Exact ties resolve to the smallest threshold. Candidates are the observed
    scores plus +inf, so the answer always exists.
    """
    cand, sens, spec = threshold_scan(labels, scores)
    j = sens + spec - 1.0
    best = int(np.argmax(j))  # first max = smallest threshold
    return {
        "threshold": float(cand[best]),
        "j": float(j[best]),
        "sensitivity": float(sens[best]),
        "specificity": float(spec[best]),
    }


def pearson(x, y) -> float:
    """Pearson correlation; requires length >= 3 and nonzero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("x and y must be 1-D of equal length")
    if len(x) < 3:
        raise LengthMismatch("need at least 3 points")
    n = len(x)
    mx = x.sum() / n
    my = y.sum() / n
    cov = (x * y).sum() / n - mx * my
    vx = (x * x).sum() / n - mx * mx
    vy = (y * y).sum() / n - my * my
    if vx <= 0.0 or vy <= 0.0:
        raise ZeroVariance("constant input has no correlation")
    return float(cov / math.sqrt(vx * vy))


def partial_correlation(x, y, z) -> float:
    """Correlation of x and y with a single control z regressed out.

    Both x and y are fit on [1, z] by least squares (closed-form normal
    equations) and the Pearson correlation of the residuals is returned. When
    z is constant the fit reduces to centering, so the result equals the raw
    Pearson correlation.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (x.shape == y.shape == z.shape) or x.ndim != 1:
        raise LengthMismatch("x, y and z must be 1-D of equal length")
    if len(x) < 4:
        raise LengthMismatch("need at least 4 points")
    n = len(x)

    sz = z.sum()
    szz = (z * z).sum()
    det = n * szz - sz * sz
    # relative tolerance: cancellation can leave a tiny nonzero det for constant z
    z_constant = not (det > 1e-12 * n * max(1.0, szz))

    def residual(v: np.ndarray) -> np.ndarray:
        if z_constant:
            return v - v.sum() / n
        sv = v.sum()
        svz = (v * z).sum()
        b1 = (n * svz - sv * sz) / det
        b0 = (sv - b1 * sz) / n
        return v - (b0 + b1 * z)

    rx = residual(x)
    ry = residual(y)
    mrx = rx.sum() / n
    mry = ry.sum() / n
    vx = (rx * rx).sum() / n - mrx * mrx
    vy = (ry * ry).sum() / n - mry * mry
    if vx < 1e-12 or vy < 1e-12:
        raise ZeroResidualVariance("a residual vector is (near) constant")
    cov = (rx * ry).sum() / n - mrx * mry
    return float(cov / math.sqrt(vx * vy))
