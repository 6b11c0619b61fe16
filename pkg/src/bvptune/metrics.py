"""Classification and regression quality metrics.

Ratios whose denominator is zero (precision with no positive predictions,
recall with no positive labels) are reported as 0.0. R² of a constant
target is undefined and returned as NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Confusion",
    "confusion",
    "accuracy",
    "precision",
    "recall",
    "roc_curve",
    "pr_curve",
    "trapezoid",
    "mape",
    "rmse",
    "r2",
]


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0


def _labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype != bool and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be boolean or 0/1")
    return y.astype(bool)


def confusion(y_true, y_pred) -> Confusion:
    t, p = _labels(y_true), _labels(y_pred)
    if t.shape != p.shape:
        raise ValueError("label arrays differ in shape")
    if t.size == 0:
        raise ValueError("empty label arrays")
    return Confusion(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        tn=int(np.sum(~t & ~p)),
        fn=int(np.sum(t & ~p)),
    )


def accuracy(y_true, y_pred) -> float:
    return confusion(y_true, y_pred).accuracy


def precision(y_true, y_pred) -> float:
    return confusion(y_true, y_pred).precision


def recall(y_true, y_pred) -> float:
    return confusion(y_true, y_pred).recall


def _sweep(y_true, scores):
    """Cumulative TP and FP counts when thresholding at each distinct score, high to low."""
    t = _labels(y_true)
    s = np.asarray(scores, dtype=float)
    if t.shape != s.shape or t.size == 0:
        raise ValueError("labels and scores must be nonempty and of equal shape")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    # last position of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(t)[ends]
    fp = (ends + 1) - tp
    return s[ends], tp.astype(float), fp.astype(float), int(t.sum())


def roc_curve(y_true, scores):
    """``(fpr, tpr, thresholds)``; a row is predicted positive when ``score >= threshold``.

    The curve starts at (0, 0) with an infinite threshold and ends at (1, 1).
    """
    thr, tp, fp, pos = _sweep(y_true, scores)
    neg = len(np.asarray(scores)) - pos
    tpr = np.r_[0.0, tp / pos if pos else np.zeros_like(tp)]
    fpr = np.r_[0.0, fp / neg if neg else np.zeros_like(fp)]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_curve(y_true, scores):
    """``(recall, precision, thresholds)`` with a leading (0, 1) anchor point."""
    thr, tp, fp, pos = _sweep(y_true, scores)
    rec = tp / pos if pos else np.zeros_like(tp)
    prec = tp / (tp + fp)
    return np.r_[0.0, rec], np.r_[1.0, prec], np.r_[np.inf, thr]


def trapezoid(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def _pair(y_true, y_pred):
    y = np.asarray(y_true, dtype=float).ravel()
    p = np.asarray(y_pred, dtype=float).ravel()
    if y.shape != p.shape:
        raise ValueError("actual and predicted arrays differ in shape")
    if y.size == 0:
        raise ValueError("empty arrays")
    return y, p


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error over rows with a nonzero actual value (NaN if none)."""
    y, p = _pair(y_true, y_pred)
    nz = y != 0
    if not nz.any():
        return math.nan
    return float(100.0 * np.mean(np.abs(y[nz] - p[nz]) / np.abs(y[nz])))


def rmse(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def r2(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    total = np.sum((y - y.mean()) ** 2)
    if total == 0:
        return math.nan
    return float(1.0 - np.sum((y - p) ** 2) / total)
