"""Confusion counting, scalar classification metrics, ROC/AUC/EER, and
vertical averaging of ROC curves.

Tumor is the positive class throughout.  Metrics whose denominator is zero
are reported as None (an explicit undefined flag) rather than NaN, so they
can never poison downstream averages.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def s(self) -> float:
        """Fraction of truly positive samples."""
        return (self.tp + self.fn) / self.n

    @property
    def p(self) -> float:
        """Fraction of predicted-positive samples."""
        return (self.tp + self.fp) / self.n


@dataclass(frozen=True)
class MetricsReport:
    """Se, Sp, Pr, F1, G, MCC and ACC(%); None marks an undefined value."""

    se: Optional[float]
    sp: Optional[float]
    pr: Optional[float]
    f1: Optional[float]
    g: Optional[float]
    mcc: Optional[float]
    acc: float

    def as_dict(self):
        return {
            "Se": self.se,
            "Sp": self.sp,
            "Pr": self.pr,
            "F1": self.f1,
            "G": self.g,
            "MCC": self.mcc,
            "ACC": self.acc,
        }


def confusion(predicted, truths) -> ConfusionCounts:
    predicted = np.asarray(predicted)
    truths = np.asarray(truths)
    if predicted.shape != truths.shape:
        raise ValueError("prediction and truth lengths disagree")
    pos = predicted == 1
    true = truths == 1
    return ConfusionCounts(
        tp=int(np.sum(pos & true)),
        tn=int(np.sum(~pos & ~true)),
        fp=int(np.sum(pos & ~true)),
        fn=int(np.sum(~pos & true)),
    )


def _ratio(num, den) -> Optional[float]:
    return num / den if den > 0 else None


def metrics(c: ConfusionCounts) -> MetricsReport:
    if c.n < 1:
        raise ValueError("empty confusion counts")
    se = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    pr = _ratio(c.tp, c.tp + c.fp)
    f1 = None
    if pr is not None and se is not None and pr + se > 0:
        f1 = 2 * pr * se / (pr + se)
    g = sqrt(se * sp) if se is not None and sp is not None else None
    s, p = c.s, c.p
    denom = p * s * (1 - p) * (1 - s)
    mcc = (c.tp / c.n - s * p) / sqrt(denom) if denom > 0 else None
    acc = 100.0 * (c.tp + c.tn) / c.n
    return MetricsReport(se=se, sp=sp, pr=pr, f1=f1, g=g, mcc=mcc, acc=acc)


@dataclass
class RocCurve:
    """Threshold-swept (FPR, TPR) staircase from (0,0) to (1,1).

    ``auc`` is None when the truths contain a single class only.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    auc: Optional[float]


def roc(scores, truths) -> RocCurve:
    """Sweep thresholds over the distinct scores, highest first; tied scores
    move together.  AUC by the trapezoidal rule."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths)
    if scores.shape != truths.shape:
        raise ValueError("scores and truths lengths disagree")
    if np.any((scores < 0) | (scores > 1)):
        raise ValueError("scores must lie in [0,1]")
    npos = int(np.sum(truths == 1))
    nneg = len(truths) - npos

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    is_pos = (truths[order] == 1).astype(float)
    cum_tp = np.cumsum(is_pos)
    cum_fp = np.cumsum(1.0 - is_pos)
    # keep only the last index of each tie group
    last = np.flatnonzero(np.diff(sorted_scores, append=-np.inf))
    tp = np.concatenate([[0.0], cum_tp[last]])
    fp = np.concatenate([[0.0], cum_fp[last]])
    if npos == 0 or nneg == 0:
        tpr = tp / npos if npos else np.zeros_like(tp)
        fpr = fp / nneg if nneg else np.zeros_like(fp)
        return RocCurve(fpr=fpr, tpr=tpr, auc=None)
    tpr = tp / npos
    fpr = fp / nneg
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, auc=auc)


def eer(curve: RocCurve) -> float:
    """Equal error rate in percent: the TPR = 1 - FPR crossing of the curve,
    located by linear interpolation between adjacent staircase points."""
    f, t = curve.fpr, curve.tpr
    gap = t - (1.0 - f)  # negative below the Se = Sp line, positive above
    for i in range(len(f) - 1):
        if gap[i] == 0.0:
            return 100.0 * f[i]
        if gap[i] < 0.0 <= gap[i + 1]:
            df, dt = f[i + 1] - f[i], t[i + 1] - t[i]
            alpha = (1.0 - f[i] - t[i]) / (df + dt)
            return 100.0 * (f[i] + alpha * df)
    return 100.0 * f[-1] if gap[-1] < 0 else 0.0


def _staircase_tpr(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """TPR along the curve polyline at each grid FPR.

    A grid point that lands exactly on a vertical jump takes the jump's
    upper end; between sweep points the segment is interpolated linearly.
    """
    fpr, tpr = curve.fpr, curve.tpr
    j = np.searchsorted(fpr, grid, side="right") - 1  # last point with fpr <= f
    j = np.clip(j, 0, len(fpr) - 1)
    jn = np.clip(j + 1, 0, len(fpr) - 1)
    span = fpr[jn] - fpr[j]
    frac = np.where(span > 0, (grid - fpr[j]) / np.where(span > 0, span, 1.0), 0.0)
    vals = tpr[j] + frac * (tpr[jn] - tpr[j])
    return np.where(fpr[j] == grid, tpr[j], vals)


DEFAULT_FPR_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


def vertical_average(curves: list, grid: np.ndarray = DEFAULT_FPR_GRID):
    """Mean TPR over the curves at each grid FPR, with the pointwise
    standard deviation (sample std for >= 2 curves, zeros for one)."""
    if not curves:
        raise ValueError("need at least one curve")
    grid = np.asarray(grid, dtype=float)
    if np.any((grid < 0) | (grid > 1)):
        raise ValueError("grid must lie in [0,1]")
    stack = np.stack([_staircase_tpr(c, grid) for c in curves])
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros_like(mean)
    return mean, std
