"""Labeled dataset: generation, CSV persistence, stratified splitting and transforms."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .sampling import default_space, latin_hypercube_matrix
from .settings import SETTING_NAMES, SETTING_RANGES, SolverOutcome, SolverSettings
from .solver import solve_bvp
from .testbench import ALL_CASES, get_problem, _coerce

__all__ = [
    "SCHEMA_VERSION",
    "INPUT_COLUMNS",
    "OUTPUT_COLUMNS",
    "TARGETS",
    "LabeledDataset",
    "FeatureTransform",
    "InputScaler",
    "RankNormalTransform",
    "generate",
    "split",
    "fit_transform",
    "save_csv",
    "load_csv",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# CSV header names of the settings, in SETTING_NAMES order
_SETTING_COLUMNS = {
    "max_grid_points": "maximum_grid_points",
    "newton_critical_tolerance": "newton_critical_tolerance",
    "newton_armijo_probes": "newton_armijo_probes",
    "newton_max_iterations": "newton_maximum_iterations",
    "newton_tolerance": "newton_tolerance",
    "add_factor": "add_factor",
    "remove_factor": "remove_factor",
    "use_collocation_scaling": "use_collocation_scaling",
}
INPUT_COLUMNS = ("test_case_type",) + tuple(_SETTING_COLUMNS[n] for n in SETTING_NAMES)
OUTPUT_COLUMNS = (
    "success_status",
    "number_of_ode_evaluations",
    "number_of_grid_points",
    "maximum_residuum",
)
# regression targets, in prediction order
TARGETS = ("ode_evaluations", "grid_points", "max_residuum")


def _case_id(case) -> str:
    c = _coerce(case)
    return c.value if hasattr(c, "value") else str(c)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Immutable columnar table of ``(test_case, settings, outcome)`` rows.

    ``settings`` is an ``(n, 8)`` float matrix ordered like
    :data:`bvptune.settings.SETTING_NAMES`. Failed rows keep whatever counters
    the solver reported; regression consumers filter them out with
    :meth:`successful`.
    """

    test_cases: np.ndarray
    settings: np.ndarray
    success: np.ndarray
    ode_evaluations: np.ndarray
    grid_points: np.ndarray
    max_residuum: np.ndarray
    schema_version: int = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.test_cases)
        cols = {
            "test_cases": np.asarray(self.test_cases, dtype=str),
            "settings": np.asarray(self.settings, dtype=float).reshape(n, len(SETTING_NAMES)),
            "success": np.asarray(self.success, dtype=bool),
            "ode_evaluations": np.asarray(self.ode_evaluations, dtype=np.int64),
            "grid_points": np.asarray(self.grid_points, dtype=np.int64),
            "max_residuum": np.asarray(self.max_residuum, dtype=float),
        }
        for name, col in cols.items():
            if len(col) != n:
                raise ValueError(f"column {name} has {len(col)} rows, expected {n}")
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        if np.isnan(cols["settings"]).any():
            raise ValueError("settings columns must not contain NaN")

    @classmethod
    def from_rows(cls, rows, metadata=None) -> "LabeledDataset":
        rows = list(rows)
        return cls(
            test_cases=np.array([_case_id(r[0]) for r in rows], dtype=str),
            settings=np.array([r[1].as_vector() for r in rows], dtype=float).reshape(-1, len(SETTING_NAMES)),
            success=[r[2].success for r in rows],
            ode_evaluations=[r[2].ode_evaluations for r in rows],
            grid_points=[r[2].grid_points for r in rows],
            max_residuum=[r[2].max_residuum for r in rows],
            metadata=dict(metadata or {}),
        )

    def __len__(self):
        return len(self.test_cases)

    @property
    def rows(self) -> list[tuple[str, SolverSettings, SolverOutcome]]:
        return [self.row(i) for i in range(len(self))]

    def row(self, i: int):
        outcome = SolverOutcome(
            bool(self.success[i]),
            int(self.ode_evaluations[i]),
            int(self.grid_points[i]),
            float(self.max_residuum[i]),
        )
        return str(self.test_cases[i]), SolverSettings.from_vector(self.settings[i]), outcome

    @property
    def cases(self) -> tuple[str, ...]:
        """Distinct test cases in order of first appearance."""
        _, first = np.unique(self.test_cases, return_index=True)
        return tuple(str(self.test_cases[i]) for i in sorted(first))

    def counts(self) -> dict[str, int]:
        return {c: int(np.sum(self.test_cases == c)) for c in self.cases}

    def targets(self) -> np.ndarray:
        """``(n, 3)`` float matrix of the regression targets."""
        return np.column_stack([self.ode_evaluations, self.grid_points, self.max_residuum]).astype(float)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64) if np.size(index) == 0 else np.asarray(index)
        return LabeledDataset(
            self.test_cases[index],
            self.settings[index],
            self.success[index],
            self.ode_evaluations[index],
            self.grid_points[index],
            self.max_residuum[index],
            self.schema_version,
            dict(self.metadata),
        )

    def for_case(self, case) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.test_cases == _case_id(case)))

    def successful(self) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.success))

    def equals(self, other: "LabeledDataset") -> bool:
        """Exact equality of every column (NaN residua compare equal)."""
        return (
            len(self) == len(other)
            and np.array_equal(self.test_cases, other.test_cases)
            and np.array_equal(self.settings, other.settings)
            and np.array_equal(self.success, other.success)
            and np.array_equal(self.ode_evaluations, other.ode_evaluations)
            and np.array_equal(self.grid_points, other.grid_points)
            and np.array_equal(self.max_residuum, other.max_residuum, equal_nan=True)
        )


# --- generation -------------------------------------------------------------


def _solve_row(case_id: str, vector) -> tuple[bool, int, int, float]:
    settings = SolverSettings.from_vector(vector)
    try:
        outcome, _ = solve_bvp(get_problem(case_id), settings)
    except Exception as exc:  # a solver crash is a failed run, not a failed dataset
        log.warning("solver raised on %s with %s: %s", case_id, settings, exc)
        return False, 0, 0, math.nan
    return outcome.success, outcome.ode_evaluations, outcome.grid_points, outcome.max_residuum


def _solve_chunk(jobs):
    return [_solve_row(c, v) for c, v in jobs]


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def generate(test_cases=None, n_per_case: int = 10_000, seed: int = 0, workers: int | None = None) -> LabeledDataset:
    """Solve every test case on one shared Latin hypercube design of settings.

    Rows are ordered case-major, then by sample index, whatever ``workers``
    is. Using the same design for every case makes the output distributions
    of different problems directly comparable.
    """
    if int(n_per_case) != n_per_case or n_per_case < 1:
        raise ValueError(f"n_per_case must be a positive integer, got {n_per_case!r}")
    cases = [_case_id(c) for c in (ALL_CASES if test_cases is None else test_cases)]
    if not cases:
        raise ValueError("no test cases given")
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be at least 1")

    design = latin_hypercube_matrix(default_space(), int(n_per_case), seed)
    # normalize through SolverSettings so the stored vector is exactly what was solved
    design = np.array([SolverSettings.from_vector(v).as_vector() for v in design])
    jobs = [(c, v) for c in cases for v in design]

    if workers == 1 or len(jobs) < 2:
        results = _solve_chunk(jobs)
    else:
        size = max(1, math.ceil(len(jobs) / (workers * 8)))
        chunks = [jobs[i : i + size] for i in range(0, len(jobs), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_solve_chunk, chunks) for r in part]

    success, evals, grid, resid = (list(col) for col in zip(*results))
    metadata = {
        "seed": int(seed),
        "n_per_case": int(n_per_case),
        "test_cases": cases,
        "sampler": "latin_hypercube",
        "space": [{"name": r.name, "lower": r.lower, "upper": r.upper, "scale": r.scale} for r in SETTING_RANGES],
        "problem_parameters": {c: get_problem(c).parameters for c in cases},
    }
    return LabeledDataset(
        np.repeat(np.array(cases, dtype=str), len(design)),
        np.tile(design, (len(cases), 1)),
        success,
        evals,
        grid,
        resid,
        metadata=metadata,
    )


# --- persistence ------------------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _fmt_setting(rng, v: float) -> str:
    if rng.scale == "boolean":
        return "true" if v >= 0.5 else "false"
    if rng.scale == "integer":
        return str(int(v))
    return repr(float(v))


def save_csv(ds: LabeledDataset, path) -> Path:
    """Write ``ds`` as CSV plus a ``<name>.json`` metadata sidecar; returns the CSV path."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INPUT_COLUMNS + OUTPUT_COLUMNS)
        for i in range(len(ds)):
            w.writerow(
                [ds.test_cases[i]]
                + [_fmt_setting(r, v) for r, v in zip(SETTING_RANGES, ds.settings[i])]
                + [
                    "true" if ds.success[i] else "false",
                    int(ds.ode_evaluations[i]),
                    int(ds.grid_points[i]),
                    repr(float(ds.max_residuum[i])),
                ]
            )
    meta = {"schema_version": ds.schema_version, "rows": len(ds), "columns": list(INPUT_COLUMNS + OUTPUT_COLUMNS)}
    meta.update(ds.metadata)
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "1"):
        return True
    if s in ("false", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def load_csv(path) -> LabeledDataset:
    path = Path(path)
    meta = {}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != INPUT_COLUMNS + OUTPUT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        records = list(reader)
    n = len(records)
    settings = np.empty((n, len(SETTING_NAMES)))
    for i, rec in enumerate(records):
        for k, (rng, s) in enumerate(zip(SETTING_RANGES, rec[1:9])):
            settings[i, k] = float(_parse_bool(s)) if rng.scale == "boolean" else float(s)
    version = int(meta.pop("schema_version", SCHEMA_VERSION))
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {version}")
    meta.pop("rows", None)
    meta.pop("columns", None)
    return LabeledDataset(
        np.array([r[0] for r in records], dtype=str),
        settings,
        [_parse_bool(r[9]) for r in records],
        [int(r[10]) for r in records],
        [int(r[11]) for r in records],
        [float(r[12]) for r in records],
        version,
        meta,
    )


# --- splitting ---------------------------------------------------------------


def split(ds: LabeledDataset, test_fraction: float = 0.2, seed: int = 0):
    """Stratified ``(train, test)`` split over ``(test_case, success)`` strata.

    Each stratum sends ``round(test_fraction * size)`` rows to the test split;
    single-row strata stay in train. Both halves keep the original row order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(len(ds), dtype=bool)
    for case in sorted(set(ds.test_cases.tolist())):
        for flag in (False, True):
            idx = np.flatnonzero((ds.test_cases == case) & (ds.success == flag))
            if idx.size < 2:
                continue
            k = min(int(math.floor(test_fraction * idx.size + 0.5)), idx.size - 1)
            test_mask[rng.permutation(idx)[:k]] = True
    return ds.subset(np.flatnonzero(~test_mask)), ds.subset(np.flatnonzero(test_mask))


# --- transforms ----------------------------------------------------------------

_LOG_COLUMNS = np.array([r.scale == "log10" for r in SETTING_RANGES])


@dataclass(frozen=True, eq=False)
class InputScaler:
    """Affine standardization of the settings matrix, in log10 space for log dimensions."""

    mean: np.ndarray
    scale: np.ndarray
    log_columns: np.ndarray = field(default_factory=lambda: _LOG_COLUMNS.copy())

    @classmethod
    def fit(cls, settings) -> "InputScaler":
        z = cls._pre(np.asarray(settings, dtype=float), _LOG_COLUMNS)
        mean = z.mean(axis=0)
        std = z.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    @staticmethod
    def _pre(x, log_columns):
        z = np.array(x, dtype=float)
        z[:, log_columns] = np.log10(z[:, log_columns])
        return z

    def transform(self, settings) -> np.ndarray:
        x = np.atleast_2d(np.asarray(settings, dtype=float))
        return (self._pre(x, self.log_columns) - self.mean) / self.scale

    def inverse(self, z) -> np.ndarray:
        x = np.atleast_2d(np.asarray(z, dtype=float)) * self.scale + self.mean
        x[:, self.log_columns] = 10.0 ** x[:, self.log_columns]
        return x

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(), "log_columns": self.log_columns.tolist()}

    @classmethod
    def from_dict(cls, d) -> "InputScaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float), np.array(d["log_columns"], dtype=bool))


@dataclass(frozen=True, eq=False)
class RankNormalTransform:
    """Monotone map from a target's empirical ranks to standard normal scores.

    ``values`` are the distinct training values in increasing order and
    ``scores`` their normal scores ``ndtri((midrank - 0.5) / n)``. Values in
    between are interpolated linearly; values outside the table are
    extrapolated with the slope of the outermost segment.
    """

    values: np.ndarray
    scores: np.ndarray

    @classmethod
    def fit(cls, y) -> "RankNormalTransform":
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise ValueError("cannot fit a transform on an empty target")
        if not np.isfinite(y).all():
            raise ValueError("targets must be finite")
        values, counts = np.unique(y, return_counts=True)
        upper = np.cumsum(counts)
        midrank = upper - (counts - 1) / 2.0
        return cls(values, ndtri((midrank - 0.5) / y.size))

    @staticmethod
    def _interp(x, xp, fp):
        x = np.asarray(x, dtype=float)
        if xp.size == 1:
            return np.full(x.shape, fp[0])
        out = np.interp(x, xp, fp)
        lo, hi = x < xp[0], x > xp[-1]
        out[lo] = fp[0] + (x[lo] - xp[0]) * (fp[1] - fp[0]) / (xp[1] - xp[0])
        out[hi] = fp[-1] + (x[hi] - xp[-1]) * (fp[-1] - fp[-2]) / (xp[-1] - xp[-2])
        return out

    def transform(self, y) -> np.ndarray:
        return self._interp(y, self.values, self.scores)

    def inverse(self, z) -> np.ndarray:
        return self._interp(z, self.scores, self.values)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "scores": self.scores.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RankNormalTransform":
        return cls(np.array(d["values"], dtype=float), np.array(d["scores"], dtype=float))


@dataclass(frozen=True, eq=False)
class FeatureTransform:
    input_scaler: InputScaler
    output_transform: dict[str, RankNormalTransform]

    def transform_targets(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.column_stack([self.output_transform[t].transform(y[:, k]) for k, t in enumerate(TARGETS)])

    def inverse_targets(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.column_stack([self.output_transform[t].inverse(z[:, k]) for k, t in enumerate(TARGETS)])

    def to_dict(self) -> dict:
        return {
            "input_scaler": self.input_scaler.to_dict(),
            "output_transform": {t: m.to_dict() for t, m in self.output_transform.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureTransform":
        return cls(
            InputScaler.from_dict(d["input_scaler"]),
            {t: RankNormalTransform.from_dict(m) for t, m in d["output_transform"].items()},
        )


def fit_transform(train: LabeledDataset) -> FeatureTransform:
    """Fit the input scaler on all training rows and target maps on the successful ones."""
    if len(train) == 0:
        raise ValueError("training set is empty")
    scaler = InputScaler.fit(train.settings)
    ok = train.successful()
    if len(ok) == 0:
        raise ValueError("training set has no successful rows to fit target transforms on")
    y = ok.targets()
    return FeatureTransform(scaler, {t: RankNormalTransform.fit(y[:, k]) for k, t in enumerate(TARGETS)})

