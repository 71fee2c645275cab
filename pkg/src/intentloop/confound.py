"""Shortcut auditing: does the model lean on a flagged artifact?

The inputs are per-case arrays: the true label, the model's disease score,
and a confounder probability (from a provided column or an external flag
classifier). A case is "flagged" when its confounder probability reaches the
flag threshold. The analysis quantifies reliance four ways: co-occurrence
rates, the share of false positives that are flagged, subgroup score medians,
and raw/partial correlation between disease score and confounder probability
(partial = controlling for the true label).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NoFalsePositives, SingleClassInput
from .stats import partial_correlation, pearson, youden_threshold


def format_percent(x: float) -> str:
    """One-decimal percent rendering: 0.458 -> "45.8%"."""
    return f"{100.0 * x:.1f}%"


@dataclass(frozen=True)
class ConfoundInput:
    """Aligned per-case arrays for one model on one evaluation split."""

    case_ids: tuple[str, ...]
    y_true: np.ndarray
    p_disease: np.ndarray
    p_confounder: np.ndarray
    flag_threshold: float = 0.5

    def __post_init__(self):
        y = np.asarray(self.y_true, dtype=int)
        pd = np.asarray(self.p_disease, dtype=float)
        pc = np.asarray(self.p_confounder, dtype=float)
        if not (len(self.case_ids) == len(y) == len(pd) == len(pc)):
            raise LengthMismatch("confound input arrays must align")
        if len(y) == 0:
            raise LengthMismatch("confound input is empty")
        if pd.min() < 0.0 or pd.max() > 1.0 or pc.min() < 0.0 or pc.max() > 1.0:
            raise ValueError("probabilities must live in [0, 1]")
        if not 0.0 <= self.flag_threshold <= 1.0:
            raise ValueError("flag threshold must be in [0, 1]")
        object.__setattr__(self, "y_true", y)
        object.__setattr__(self, "p_disease", pd)
        object.__setattr__(self, "p_confounder", pc)

    @property
    def flag(self) -> np.ndarray:
        return self.p_confounder >= self.flag_threshold

    def __len__(self) -> int:
        return len(self.y_true)


def cross_tabulate(inp: ConfoundInput) -> dict:
    """Flag rates by class: rate(flag | y=1) and rate(flag | y=0)."""
    y = inp.y_true
    if not (np.any(y == 1) and np.any(y == 0)):
        raise SingleClassInput("cross-tabulation needs both classes")
    flag = inp.flag
    return {
        "rate_flag_pos": float(np.mean(flag[y == 1])),
        "rate_flag_neg": float(np.mean(flag[y == 0])),
    }


def fp_attribution(inp: ConfoundInput, threshold: float) -> float:
    """Share of false positives that carry the flag, at a given threshold.

    A false positive is a negative case with p_disease >= threshold. Raises
    NoFalsePositives when the model makes none at this operating point.
    """
    fp = (inp.p_disease >= threshold) & (inp.y_true == 0)
    n_fp = int(fp.sum())
    if n_fp == 0:
        raise NoFalsePositives("no false positives at this threshold")
    return float(np.sum(fp & inp.flag) / n_fp)


def subgroup_medians(inp: ConfoundInput) -> dict:
    """Median disease score in each (label, flag) cell; None for empty cells.

    Even-sized cells take the mean of the two central values.
    """
    flag = inp.flag
    out = {}
    for y_val in (0, 1):
        for f_val in (False, True):
            sel = (inp.y_true == y_val) & (flag == f_val)
            key = f"y{y_val}_flag{int(f_val)}"
            out[key] = float(np.median(inp.p_disease[sel])) if np.any(sel) else None
    return out


@dataclass(frozen=True)
class ConfoundReport:
    rate_flag_pos: float
    rate_flag_neg: float
    fp_threshold: float
    fp_flagged_fraction: float | None
    medians: dict
    raw_correlation: float
    partial_correlation: float
    baseline: dict | None = None
    reductions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rate_flag_pos": self.rate_flag_pos,
            "rate_flag_neg": self.rate_flag_neg,
            "fp_threshold": self.fp_threshold,
            "fp_flagged_fraction": self.fp_flagged_fraction,
            "medians": self.medians,
            "raw_correlation": self.raw_correlation,
            "partial_correlation": self.partial_correlation,
            "baseline": self.baseline,
            "reductions": self.reductions,
        }


def _relative_reduction(base: float, current: float) -> float:
    """(base - current) / base, computed from unrounded values."""
    return (base - current) / base


def confound_report(inp: ConfoundInput, baseline: ConfoundInput | None = None,
                    threshold: float | None = None) -> ConfoundReport:
    """Assemble the full reliance audit for one model.

    ``threshold`` is the operating point for false-positive attribution; it
    defaults to the Youden threshold of the model's own scores on this split.
    With a ``baseline`` input (an earlier model on the same split), relative
    reductions of the raw and partial correlations are included, computed
    from unrounded values.
    """
    if threshold is None:
        threshold = youden_threshold(inp.y_true, inp.p_disease)["threshold"]
    rates = cross_tabulate(inp)
    try:
        fp_frac = fp_attribution(inp, threshold)
    except NoFalsePositives:
        fp_frac = None
    raw = pearson(inp.p_disease, inp.p_confounder)
    partial = partial_correlation(inp.p_disease, inp.p_confounder,
                                  inp.y_true.astype(float))

    baseline_block = None
    reductions: dict = {}
    if baseline is not None:
        base_threshold = youden_threshold(baseline.y_true, baseline.p_disease)["threshold"]
        try:
            base_fp = fp_attribution(baseline, base_threshold)
        except NoFalsePositives:
            base_fp = None
        base_raw = pearson(baseline.p_disease, baseline.p_confounder)
        base_partial = partial_correlation(baseline.p_disease, baseline.p_confounder,
                                           baseline.y_true.astype(float))
        baseline_block = {
            "fp_threshold": base_threshold,
            "fp_flagged_fraction": base_fp,
            "raw_correlation": base_raw,
            "partial_correlation": base_partial,
            "medians": subgroup_medians(baseline),
        }
        reductions = {
            "raw_correlation": _relative_reduction(base_raw, raw),
            "partial_correlation": _relative_reduction(base_partial, partial),
        }

    return ConfoundReport(
        rate_flag_pos=rates["rate_flag_pos"],
        rate_flag_neg=rates["rate_flag_neg"],
        fp_threshold=float(threshold),
        fp_flagged_fraction=fp_frac,
        medians=subgroup_medians(inp),
        raw_correlation=raw,
        partial_correlation=partial,
        baseline=baseline_block,
        reductions=reductions,
    )


def render_confound_text(report: ConfoundReport) -> str:
    """Three-panel plain-text rendering of a reliance audit."""
    lines = []
    lines.append("flag co-occurrence")
    lines.append(f"  rate(flag | y=1): {format_percent(report.rate_flag_pos)}")
    lines.append(f"  rate(flag | y=0): {format_percent(report.rate_flag_neg)}")
    lines.append("false-positive attribution")
    if report.fp_flagged_fraction is None:
        lines.append(f"  no false positives at threshold {report.fp_threshold:.4f}")
    else:
        lines.append(
            f"  flagged share of false positives: "
            f"{format_percent(report.fp_flagged_fraction)} "
            f"(threshold {report.fp_threshold:.4f})")
    lines.append("score distribution and correlation")
    for key in ("y0_flag0", "y0_flag1", "y1_flag0", "y1_flag1"):
        v = report.medians.get(key)
        lines.append(f"  median score {key}: " + ("n/a" if v is None else f"{v:.4f}"))
    lines.append(f"  raw correlation: {report.raw_correlation:.4f}")
    lines.append(f"  partial correlation (control y): {report.partial_correlation:.4f}")
    if report.baseline is not None:
        base = report.baseline
        lines.append("versus baseline")
        if base["fp_flagged_fraction"] is not None and report.fp_flagged_fraction is not None:
            lines.append(
                f"  flagged FP share: {format_percent(base['fp_flagged_fraction'])}"
                f" -> {format_percent(report.fp_flagged_fraction)}")
        lines.append(
            f"  raw correlation: {base['raw_correlation']:.4f} -> "
            f"{report.raw_correlation:.4f} "
            f"({format_percent(report.reductions['raw_correlation'])} lower)")
        lines.append(
            f"  partial correlation: {base['partial_correlation']:.4f} -> "
            f"{report.partial_correlation:.4f} "
            f"({format_percent(report.reductions['partial_correlation'])} lower)")
    return "\n".join(lines)
