"""Population stability index between output distributions of different problems."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, _case_id

__all__ = [
    "PsiConfig",
    "PsiLabel",
    "PsiReport",
    "PsiMatrix",
    "psi",
    "psi_from_proportions",
    "psi_matrix",
    "label_for",
]

TARGET_COLUMNS = ("ode_evaluations", "grid_points", "max_residuum")


@dataclass(frozen=True)
class PsiConfig:
    bins: int = 10
    epsilon: float = 1e-4

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 2:
            raise ValueError("at least two bins are required")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


class PsiLabel(str, enum.Enum):
    STABLE = "Stable"
    SMALL_SHIFT = "SmallShift"
    DIFFERENT = "Different"


def label_for(value: float) -> PsiLabel:
    if value < 0.1:
        return PsiLabel.STABLE
    if value <= 0.25:
        return PsiLabel.SMALL_SHIFT
    return PsiLabel.DIFFERENT


@dataclass(frozen=True)
class PsiReport:
    value: float
    contributions: tuple
    label: PsiLabel
    edges: tuple = ()
    collapsed: bool = False  # reference had fewer distinct values than bins


def _smooth(p: np.ndarray, eps: float) -> np.ndarray:
    p = np.where(p == 0, eps, p)
    return p / p.sum()


def psi_from_proportions(reference, candidate, epsilon: float = 1e-4) -> PsiReport:
    """PSI of two proportion vectors over the same bins."""
    q = np.asarray(reference, dtype=float)
    p = np.asarray(candidate, dtype=float)
    if q.shape != p.shape or q.ndim != 1 or q.size == 0:
        raise ValueError("proportion vectors must be nonempty and equally long")
    if (q < 0).any() or (p < 0).any():
        raise ValueError("proportions must be nonnegative")
    q, p = _smooth(q / q.sum(), epsilon), _smooth(p / p.sum(), epsilon)
    terms = (p - q) * np.log(p / q)
    value = float(terms.sum())
    return PsiReport(value, tuple(float(t) for t in terms), label_for(value))


def psi(reference, candidate, config: PsiConfig | None = None) -> PsiReport:
    """PSI of ``candidate`` against bins placed at the quantiles of ``reference``.

    Bin ``k`` holds values in ``[e_{k-1}, e_k)``, with the outer bins open.
    When the reference has fewer than ``bins`` distinct values every distinct
    value gets its own bin and ``collapsed`` is set.
    """
    config = config or PsiConfig()
    ref = np.asarray(reference, dtype=float).ravel()
    cand = np.asarray(candidate, dtype=float).ravel()
    if ref.size == 0 or cand.size == 0:
        raise ValueError("both samples must be nonempty")
    if np.isnan(ref).any() or np.isnan(cand).any():
        raise ValueError("samples must not contain NaN")
    distinct = np.unique(ref)
    collapsed = distinct.size < config.bins
    if collapsed:
        edges = distinct[1:]
    else:
        # edges are sample values so that any increasing map of both samples keeps the bins
        qs = np.quantile(ref, np.linspace(0.0, 1.0, config.bins + 1)[1:-1], method="higher")
        edges = np.unique(qs)
        edges = edges[edges > distinct[0]]
    nb = edges.size + 1
    q = np.bincount(np.searchsorted(edges, ref, side="right"), minlength=nb) / ref.size
    p = np.bincount(np.searchsorted(edges, cand, side="right"), minlength=nb) / cand.size
    rep = psi_from_proportions(q, p, config.epsilon)
    return PsiReport(rep.value, rep.contributions, rep.label, tuple(float(e) for e in edges), bool(collapsed))


@dataclass(frozen=True)
class PsiMatrix:
    """Row ``i`` uses case ``i`` as the reference population, column ``j`` as the candidate."""

    cases: tuple
    target: str
    reports: tuple  # tuple of rows of PsiReport
    skipped: tuple = ()

    @property
    def values(self) -> np.ndarray:
        return np.array([[r.value for r in row] for row in self.reports], dtype=float).reshape(len(self.cases), len(self.cases))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["reference"] + list(self.cases))
            for case, row in zip(self.cases, self.values):
                w.writerow([case] + [f"{v:.4f}" for v in row])
        return path


def psi_matrix(
    ds: LabeledDataset,
    target: str = "ode_evaluations",
    config: PsiConfig | None = None,
    cases=None,
    successful_only: bool = False,
) -> PsiMatrix:
    """Pairwise PSI of one output feature across the test cases of ``ds``.

    Requested cases without rows are skipped and listed in ``skipped``. Rows
    with a NaN value of ``target`` (failed runs without a residuum) are
    dropped.
    """
    if target not in TARGET_COLUMNS:
        raise ValueError(f"target must be one of {TARGET_COLUMNS}")
    config = config or PsiConfig()
    want = list(ds.cases) if cases is None else [_case_id(c) for c in cases]
    present = set(ds.cases)
    skipped = tuple(c for c in want if c not in present)
    kept = [c for c in want if c in present]
    if len(kept) < 2:
        raise ValueError("at least two test cases with data are required")
    samples = {}
    for c in kept:
        sub = ds.for_case(c)
        if successful_only:
            sub = sub.successful()
        v = np.asarray(getattr(sub, target), dtype=float)
        samples[c] = v[~np.isnan(v)]
    rows = []
    for a in kept:
        row = []
        for b in kept:
            row.append(psi(samples[a], samples[b], config))
        rows.append(tuple(row))
    return PsiMatrix(tuple(kept), target, tuple(rows), skipped)
