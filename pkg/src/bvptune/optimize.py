"""Surrogate-constrained multi-objective search over the solver settings.

Individuals live in unit coordinates of :func:`bvptune.sampling.default_space`
(log10 space for log-scaled settings) and are decoded to natural settings
before every surrogate query. The classifier acts as the constraint: points
it rejects are dominated by every accepted point.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import _unit_design, default_space
from .settings import SETTING_NAMES, SolverSettings
from .solver import solve_bvp
from .testbench import get_problem
from .dataset import TARGETS, _case_id

__all__ = [
    "Objective",
    "ObjectiveSpec",
    "FrontPoint",
    "ParetoFront",
    "NoFeasibleRegionError",
    "ValidationReport",
    "dominates",
    "nondominated_sort",
    "nondominated_mask",
    "crowding_distance",
    "hypervolume",
    "optimize_settings",
    "validate_against_solver",
    "read_front_csv",
]

POPULATION = 64
MAX_INFEASIBLE_GENERATIONS = 5
CROSSOVER_PROBABILITY = 0.9
SBX_ETA = 15.0
MUTATION_SCALE = 0.1


class Objective(str, enum.Enum):
    ODE_EVALUATIONS = "ode_evaluations"
    GRID_POINTS = "grid_points"
    MAX_RESIDUUM = "max_residuum"

    @classmethod
    def parse(cls, name) -> "Objective":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "evals": cls.ODE_EVALUATIONS,
            "odeevaluations": cls.ODE_EVALUATIONS,
            "grid": cls.GRID_POINTS,
            "gridpoints": cls.GRID_POINTS,
            "residuum": cls.MAX_RESIDUUM,
            "residual": cls.MAX_RESIDUUM,
            "maxresiduum": cls.MAX_RESIDUUM,
        }
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def column(self) -> int:
        return TARGETS.index(self.value)


class NoFeasibleRegionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    objectives: tuple
    test_case: str
    budget: int = 50 * POPULATION
    seed: int = 0
    population: int = POPULATION
    sampler: str = "nsga2"

    def __post_init__(self):
        objs = tuple(Objective.parse(o) for o in self.objectives)
        if not 1 <= len(objs) <= 3 or len(set(objs)) != len(objs):
            raise ValueError("between one and three distinct objectives are required")
        object.__setattr__(self, "objectives", objs)
        object.__setattr__(self, "test_case", _case_id(self.test_case))
        if self.population < 4 or self.population % 2:
            raise ValueError("population must be an even number of at least 4")
        if self.budget < self.population:
            raise ValueError("budget must be at least one population")
        if self.sampler not in ("nsga2", "random"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


# --- dominance ---------------------------------------------------------------


def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return P.reshape(0, 0)
    if P.ndim != 2:
        raise ValueError("points must be a list of equally long objective vectors")
    if not np.isfinite(P).all():
        raise ValueError("objective values must be finite")
    return P


def _dominance_matrix(P: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is true when point ``i`` dominates point ``j``."""
    le = np.all(P[:, None, :] <= P[None, :, :], axis=2)
    lt = np.any(P[:, None, :] < P[None, :, :], axis=2)
    return le & lt


def nondominated_sort(points) -> list[list[int]]:
    """Fronts of point indices, rank 0 first; each front lists indices in input order."""
    P = _as_points(points)
    if P.shape[0] == 0:
        return []
    D = _dominance_matrix(P)
    count = D.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - D[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def nondominated_mask(points, chunk: int = 1024) -> np.ndarray:
    """Boolean mask of the rank-0 points, computed blockwise for large inputs."""
    P = _as_points(points)
    n = P.shape[0]
    keep = np.ones(n, dtype=bool)
    for s in range(0, n, chunk):
        B = P[s : s + chunk]
        le = np.all(P[:, None, :] <= B[None, :, :], axis=2)
        lt = np.any(P[:, None, :] < B[None, :, :], axis=2)
        keep[s : s + chunk] = ~np.any(le & lt, axis=0)
    return keep


def crowding_distance(front) -> np.ndarray:
    """NSGA-II crowding distance; boundary points of every objective get ``inf``."""
    F = _as_points(front)
    n = F.shape[0]
    if n == 0:
        return np.zeros(0)
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for k in range(F.shape[1]):
        order = np.argsort(F[:, k], kind="mergesort")
        f = F[order, k]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = f[-1] - f[0]
        if span == 0:
            continue
        dist[order[1:-1]] += (f[2:] - f[:-2]) / span
    return dist


def _hv2d(P: np.ndarray, ref) -> float:
    P = P[np.all(P < ref, axis=1)]
    if P.shape[0] == 0:
        return 0.0
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    hv, best_y = 0.0, ref[1]
    xs = np.r_[P[:, 0], ref[0]]
    for i in range(P.shape[0]):
        best_y = min(best_y, P[i, 1])
        hv += (xs[i + 1] - xs[i]) * (ref[1] - best_y)
    return hv


def hypervolume(points, reference) -> float:
    """Volume dominated by ``points`` and bounded by ``reference`` (1 to 3 objectives)."""
    ref = np.asarray(reference, dtype=float)
    P = np.asarray(points, dtype=float).reshape(-1, ref.size)
    m = ref.size
    if P.shape[0] == 0:
        return 0.0
    if m == 1:
        return float(max(0.0, ref[0] - P[:, 0].min()))
    if m == 2:
        return float(_hv2d(P, ref))
    if m == 3:
        P = P[np.all(P < ref, axis=1)]
        if P.shape[0] == 0:
            return 0.0
        zs = np.unique(P[:, 2])
        bounds = np.r_[zs, ref[2]]
        hv = 0.0
        for i, z in enumerate(zs):
            hv += _hv2d(P[P[:, 2] <= z, :2], ref[:2]) * (bounds[i + 1] - z)
        return float(hv)
    raise ValueError("hypervolume supports at most three objectives")


# --- fronts ------------------------------------------------------------------------


@dataclass(frozen=True)
class FrontPoint:
    settings: SolverSettings
    predicted: tuple
    feasibility_probability: float


@dataclass(frozen=True, eq=False)
class ParetoFront:
    test_case: str
    objectives: tuple
    points: list
    trial_settings: np.ndarray = field(repr=False)
    trial_predicted: np.ndarray = field(repr=False)
    trial_feasible: np.ndarray = field(repr=False)
    trial_probability: np.ndarray = field(repr=False)

    @property
    def columns(self) -> list[str]:
        return list(SETTING_NAMES) + [f"predicted_{o.value}" for o in self.objectives] + ["feasibility_probability"]

    @property
    def all_trials(self) -> list:
        return [
            (SolverSettings.from_vector(x), tuple(float(v) for v in p), bool(f))
            for x, p, f in zip(self.trial_settings, self.trial_predicted, self.trial_feasible)
        ]

    def objective_matrix(self) -> np.ndarray:
        return np.array([p.predicted for p in self.points], dtype=float).reshape(len(self.points), len(self.objectives))

    def hypervolume(self, reference) -> float:
        return hypervolume(self.objective_matrix(), reference)

    def records(self) -> list[dict]:
        rows = []
        for p in self.points:
            row = p.settings.as_dict()
            row.update({f"predicted_{o.value}": v for o, v in zip(self.objectives, p.predicted)})
            row["feasibility_probability"] = p.feasibility_probability
            rows.append(row)
        return rows

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame(self.records(), columns=self.columns)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.records():
                w.writerow([_fmt(row[c]) for c in self.columns])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        doc = {
            "test_case": self.test_case,
            "objectives": [o.value for o in self.objectives],
            "columns": self.columns,
            "points": self.records(),
        }
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path

    def trials_to_csv(self, path) -> Path:
        path = Path(path)
        cols = list(SETTING_NAMES) + [f"predicted_{o.value}" for o in self.objectives] + ["feasible", "feasibility_probability"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for x, p, f, q in zip(self.trial_settings, self.trial_predicted, self.trial_feasible, self.trial_probability):
                s = SolverSettings.from_vector(x).as_dict()
                w.writerow([_fmt(s[c]) for c in SETTING_NAMES] + [_fmt(v) for v in p] + [_fmt(bool(f)), _fmt(q)])
        return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# --- search ------------------------------------------------------------------------


class _Problem:
    def __init__(self, spec: ObjectiveSpec, classifier, regressor):
        self.spec = spec
        self.space = default_space()
        self.classifier = classifier
        self.regressor = regressor
        self.cols = [o.column for o in spec.objectives]
        self.threshold = float(getattr(classifier, "decision_threshold", 0.5))

    def decode(self, U: np.ndarray) -> np.ndarray:
        X = np.column_stack([d.from_unit(U[:, k]) for k, d in enumerate(self.space.dimensions)])
        return X

    def evaluate(self, U: np.ndarray):
        X = self.decode(U)
        prob = np.asarray(self.classifier.predict_proba([self.spec.test_case] * X.shape[0], X), dtype=float)
        F = np.asarray(self.regressor.predict(X), dtype=float)[:, self.cols]
        return X, F, prob, prob >= self.threshold


def _rank(F: np.ndarray, feasible: np.ndarray, prob: np.ndarray):
    """Selection rank and crowding under feasibility dominance."""
    n = F.shape[0]
    rank = np.zeros(n, dtype=np.int64)
    crowd = np.zeros(n)
    feas = np.flatnonzero(feasible)
    top = 0
    for r, front in enumerate(nondominated_sort(F[feas]) if feas.size else []):
        members = feas[front]
        rank[members] = r
        crowd[members] = crowding_distance(F[members])
        top = r + 1
    infeas = np.flatnonzero(~feasible)
    if infeas.size:
        # higher probability ranks first; equal probabilities share a rank
        levels = np.unique(-prob[infeas], return_inverse=True)[1]
        rank[infeas] = top + levels
    return rank, crowd


def _better(i, j, rank, crowd) -> int:
    if rank[i] != rank[j]:
        return i if rank[i] < rank[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return min(i, j)


def _sbx(p1, p2, rng):
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() < CROSSOVER_PROBABILITY:
        genes = rng.random(p1.size) < 0.5
        u = rng.random(p1.size)
        beta = np.where(u <= 0.5, (2 * u) ** (1 / (SBX_ETA + 1)), (1 / (2 * (1 - u))) ** (1 / (SBX_ETA + 1)))
        mid, half = (p1 + p2) / 2, (p2 - p1) / 2
        c1 = np.where(genes, mid - beta * half, p1)
        c2 = np.where(genes, mid + beta * half, p2)
    return np.clip(c1, 0, 1), np.clip(c2, 0, 1)


def _mutate(U, rng):
    mask = rng.random(U.shape) < 1.0 / U.shape[1]
    return np.clip(U + mask * rng.normal(0.0, MUTATION_SCALE, U.shape), 0.0, 1.0)


def _offspring(U, rank, crowd, rng):
    n = U.shape[0]
    picks = rng.integers(0, n, size=(n, 2))
    parents = [_better(a, b, rank, crowd) for a, b in picks]
    children = np.empty_like(U)
    for k in range(0, n, 2):
        children[k], children[k + 1] = _sbx(U[parents[k]], U[parents[k + 1]], rng)
    return _mutate(children, rng)


def _nsga2(problem: _Problem, rng):
    spec = problem.spec
    n = spec.population
    generations = spec.budget // n
    log = []
    U = _unit_design(problem.space, n, rng)
    X, F, prob, feas = problem.evaluate(U)
    log.append((X, F, prob, feas))
    infeasible_run = 0 if feas.any() else 1
    for _ in range(generations - 1):
        if infeasible_run >= MAX_INFEASIBLE_GENERATIONS:
            break
        rank, crowd = _rank(F, feas, prob)
        V = _offspring(U, rank, crowd, rng)
        Xv, Fv, pv, fv = problem.evaluate(V)
        log.append((Xv, Fv, pv, fv))
        U, X, F, prob, feas = (np.concatenate(pair) for pair in ((U, V), (X, Xv), (F, Fv), (prob, pv), (feas, fv)))
        rank, crowd = _rank(F, feas, prob)
        order = np.lexsort((-crowd, rank))[:n]
        order.sort()  # keep survivors in creation order for reproducible ties
        U, X, F, prob, feas = U[order], X[order], F[order], prob[order], feas[order]
        infeasible_run = 0 if feas.any() else infeasible_run + 1
    if infeasible_run >= MAX_INFEASIBLE_GENERATIONS:
        raise NoFeasibleRegionError(
            f"{spec.test_case}: the classifier rejected the whole population for {MAX_INFEASIBLE_GENERATIONS} generations"
        )
    return log


def _random_search(problem: _Problem, rng):
    spec = problem.spec
    log = []
    for start in range(0, spec.budget, spec.population):
        U = rng.random((min(spec.population, spec.budget - start), len(problem.space)))
        log.append(problem.evaluate(U))
    return log


def optimize_settings(spec: ObjectiveSpec, classifier, regressor) -> ParetoFront:
    """Minimize the surrogate-predicted objectives subject to classifier feasibility.

    ``classifier`` needs ``predict_proba(test_cases, X)`` and
    ``decision_threshold``; ``regressor`` needs ``predict(X)`` returning the
    three targets. The returned front holds the nondominated feasible trials
    of the whole run with duplicate objective vectors removed (first trial
    kept).
    """
    problem = _Problem(spec, classifier, regressor)
    rng = np.random.default_rng(spec.seed)
    log = _nsga2(problem, rng) if spec.sampler == "nsga2" else _random_search(problem, rng)
    X = np.concatenate([e[0] for e in log])
    F = np.concatenate([e[1] for e in log])
    prob = np.concatenate([e[2] for e in log])
    feas = np.concatenate([e[3] for e in log])
    if not feas.any():
        raise NoFeasibleRegionError(f"{spec.test_case}: no trial was predicted feasible")

    idx = np.flatnonzero(feas)
    if len(spec.objectives) == 1:
        chosen = [int(idx[np.argmin(F[idx, 0])])]  # first trial attaining the minimum
    else:
        front = idx[nondominated_mask(F[idx])]
        _, first = np.unique(F[front], axis=0, return_index=True)
        chosen = sorted(int(front[i]) for i in first)
    points = [FrontPoint(SolverSettings.from_vector(X[i]), tuple(float(v) for v in F[i]), float(prob[i])) for i in chosen]
    return ParetoFront(spec.test_case, spec.objectives, points, X, F, feas, prob)


# --- validation ------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    test_case: str
    rows: list
    success_fraction: float
    median_relative_error: dict

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "test_case": self.test_case,
            "success_fraction": self.success_fraction,
            "median_relative_error": {k: clean(v) for k, v in self.median_relative_error.items()},
            "rows": [{k: clean(v) for k, v in r.items()} for r in self.rows],
        }


def validate_against_solver(front: ParetoFront, test_case=None) -> ValidationReport:
    """Run the real solver on every front point and compare with the predictions."""
    case = _case_id(test_case if test_case is not None else front.test_case)
    problem = get_problem(case)
    rows = []
    errors = {o.value: [] for o in front.objectives}
    for p in front.points:
        outcome, _ = solve_bvp(problem, p.settings)
        actual = {
            "ode_evaluations": outcome.ode_evaluations,
            "grid_points": outcome.grid_points,
            "max_residuum": outcome.max_residuum,
        }
        row = p.settings.as_dict()
        row["actual_success"] = outcome.success
        for o, pred in zip(front.objectives, p.predicted):
            row[f"predicted_{o.value}"] = pred
        row.update({f"actual_{k}": v for k, v in actual.items()})
        if outcome.success:
            for o, pred in zip(front.objectives, p.predicted):
                a = float(actual[o.value])
                if a != 0:
                    errors[o.value].append(abs(pred - a) / abs(a))
        rows.append(row)
    success = float(np.mean([r["actual_success"] for r in rows])) if rows else math.nan
    med = {k: float(np.median(v)) if v else math.nan for k, v in errors.items()}
    return ValidationReport(case, rows, success, med)


def read_front_csv(path, test_case) -> ParetoFront:
    """Rebuild the points of a front written by :meth:`ParetoFront.to_csv` (the trial log is empty)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        records = list(reader)
    objectives = tuple(Objective.parse(c[len("predicted_"):]) for c in header if c.startswith("predicted_"))
    expected = list(SETTING_NAMES) + [f"predicted_{o.value}" for o in objectives] + ["feasibility_probability"]
    if header != expected or not objectives:
        raise ValueError(f"{path}: unexpected front columns {header}")
    k = len(SETTING_NAMES)
    points = []
    for rec in records:
        vec = [1.0 if v == "true" else 0.0 if v == "false" else float(v) for v in rec[:k]]
        pred = tuple(float(v) for v in rec[k : k + len(objectives)])
        points.append(FrontPoint(SolverSettings.from_vector(vec), pred, float(rec[-1])))
    empty = np.zeros((0, k))
    return ParetoFront(_case_id(test_case), objectives, points, empty, np.zeros((0, len(objectives))), np.zeros(0, bool), np.zeros(0))
