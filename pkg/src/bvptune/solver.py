"""Fourth-order collocation solver for two-point boundary value problems.

The discretization is the three-stage Lobatto IIIA (Simpson) scheme: on every
subinterval the solution is a cubic Hermite polynomial that matches the ODE at
both end points and at the midpoint. The resulting global nonlinear system is
solved with a damped Newton iteration (Armijo backtracking), the defect of the
cubic interpolant drives adaptive refinement and coarsening of the mesh.

Right-hand sides are vectorized: ``rhs(x, y)`` receives abscissae of shape
``(n,)`` and states of shape ``(d, n)`` and returns derivatives of shape
``(d, n)``. Every column counts as one ODE evaluation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .settings import SolverOutcome, SolverSettings

__all__ = [
    "ProblemSpec",
    "MeshSolution",
    "NewtonStatus",
    "NewtonReport",
    "InvalidMeshError",
    "MeshBudgetExceeded",
    "RELATIVE_TOLERANCE",
    "INITIAL_INTERVALS",
    "MAX_OUTER_ITERATIONS",
    "ARMIJO_SIGMA",
    "assemble_collocation_system",
    "newton_armijo_solve",
    "estimate_interval_residuals",
    "adapt_mesh",
    "solve_on_mesh",
    "solve_bvp",
    "hermite_interpolate",
]

RELATIVE_TOLERANCE = 1e-3
INITIAL_INTERVALS = 10
MAX_OUTER_ITERATIONS = 12
MAX_CONSECUTIVE_DIVERGENCES = 3
ARMIJO_SIGMA = 1e-4
_FD_STEP = math.sqrt(np.finfo(float).eps)
_COMPLEX_STEP = 1e-30
# Interior points of the four-point Lobatto rule on [0, 1].
_LOBATTO_INTERIOR = (0.5 - math.sqrt(5.0) / 10.0, 0.5 + math.sqrt(5.0) / 10.0)


class InvalidMeshError(ValueError):
    pass


class MeshBudgetExceeded(RuntimeError):
    """Adaptation asked for more nodes than ``max_grid_points`` allows."""

    def __init__(self, requested: int, budget: int):
        super().__init__(f"mesh needs {requested} nodes, budget is {budget}")
        self.requested = requested
        self.budget = budget


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A two-point boundary value problem ``y' = rhs(x, y)``, ``boundary(y(a), y(b)) = 0``.

    ``guess`` returns the initial guess at given abscissae (shape ``(d, n)``);
    when omitted the zero function is used. ``exact_solution`` has the same
    calling convention.

    Jacobians of ``rhs`` and ``boundary`` are taken column by column, one RHS
    call per state component and point. ``jacobian="complex-step"`` (the
    default) perturbs along the imaginary axis and needs both functions to
    accept complex input; it is exact to rounding for analytic functions, so
    linear problems converge in a single Newton step. ``"forward"`` uses
    forward differences with step ``sqrt(eps) * (1 + |y|)``.
    """

    id: str
    dimension: int
    interval: tuple[float, float]
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    boundary: Callable[[np.ndarray, np.ndarray], np.ndarray]
    is_linear: bool
    exact_solution: Callable[[np.ndarray], np.ndarray] | None = None
    guess: Callable[[np.ndarray], np.ndarray] | None = None
    description: str = ""
    parameters: dict = field(default_factory=dict)
    jacobian: str = "complex-step"

    def __post_init__(self):
        if self.jacobian not in ("complex-step", "forward"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        a, b = self.interval
        if not a < b:
            raise ValueError(f"interval must satisfy a < b, got {self.interval}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    def initial_guess(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.guess is None:
            return np.zeros((self.dimension, x.size))
        return np.asarray(self.guess(x), dtype=float).reshape(self.dimension, x.size)


@dataclass(frozen=True, eq=False)
class MeshSolution:
    nodes: np.ndarray  # (n,)
    values: np.ndarray  # (d, n)
    interval_residuals: np.ndarray  # (n - 1,), absolute defect per subinterval
    derivatives: np.ndarray | None = None  # (d, n), rhs at the nodes

    def __call__(self, x) -> np.ndarray:
        """Evaluate the cubic collocation interpolant at ``x``."""
        if self.derivatives is None:
            raise ValueError("solution carries no nodal derivatives")
        return hermite_interpolate(self.nodes, self.values, self.derivatives, x)


class NewtonStatus(enum.Enum):
    CONVERGED = "Converged"
    CRITICALLY_CONVERGED = "CriticallyConverged"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class NewtonReport:
    status: NewtonStatus
    iterations: int
    final_residual_norm: float

    @property
    def converged(self) -> bool:
        return self.status is not NewtonStatus.DIVERGED


class _CountingRHS:
    def __init__(self, rhs):
        self.rhs = rhs
        self.evaluations = 0

    def __call__(self, x, y, dtype=float):
        self.evaluations += x.size
        return np.asarray(self.rhs(x, y), dtype=dtype)


def _check_mesh(mesh, interval=None) -> np.ndarray:
    x = np.asarray(mesh, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidMeshError("mesh needs at least two nodes")
    if not np.all(np.diff(x) > 0):
        raise InvalidMeshError("mesh nodes must be strictly increasing")
    if interval is not None and (x[0] != interval[0] or x[-1] != interval[1]):
        raise InvalidMeshError(f"mesh must span {interval}, got [{x[0]}, {x[-1]}]")
    return x


class _Collocation:
    """Residual and sparse Jacobian of the global collocation system on one mesh."""

    def __init__(self, problem: ProblemSpec, x: np.ndarray, settings: SolverSettings, rhs):
        self.problem = problem
        self.rhs = rhs
        self.x = x
        self.h = np.diff(x)
        self.x_mid = x[:-1] + 0.5 * self.h
        self.d = d = problem.dimension
        self.n = n = x.size
        a, b = problem.interval
        if settings.use_collocation_scaling:
            self.scale = (b - a) / ((n - 1) * self.h)
        else:
            self.scale = np.ones(n - 1)
        self.complex_step = problem.jacobian == "complex-step"
        self._cache_key = None
        self._build_pattern(n, d)

    def _build_pattern(self, n, d):
        N = n - 1
        r = np.arange(d)
        # boundary rows: columns of the first and last node
        bc_rows = np.repeat(r, d)
        bc_cols = np.tile(r, d)
        rows = [bc_rows, bc_rows]
        cols = [bc_cols, bc_cols + (n - 1) * d]
        i = np.arange(N)[:, None, None]
        block_rows = d + i * d + r[None, :, None] + 0 * r[None, None, :]
        block_cols = i * d + r[None, None, :] + 0 * r[None, :, None]
        rows += [block_rows.ravel(), block_rows.ravel()]
        cols += [block_cols.ravel(), (block_cols + d).ravel()]
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    def _unpack(self, flat):
        return np.asarray(flat, dtype=float).reshape(self.n, self.d).T

    def residual(self, flat):
        Y = self._unpack(flat)
        d, h = self.d, self.h
        with np.errstate(all="ignore"):
            f = self.rhs(self.x, Y)
            y_mid = 0.5 * (Y[:, :-1] + Y[:, 1:]) - (h / 8.0) * (f[:, 1:] - f[:, :-1])
            f_mid = self.rhs(self.x_mid, y_mid)
            phi = Y[:, 1:] - Y[:, :-1] - (h / 6.0) * (f[:, :-1] + 4.0 * f_mid + f[:, 1:])
            phi *= self.scale
            bc = np.asarray(self.problem.boundary(Y[:, 0], Y[:, -1]), dtype=float).reshape(-1)
        if bc.size != d:
            raise ValueError(f"boundary returned {bc.size} residuals, expected {d}")
        self._cache_key = np.array(flat, dtype=float, copy=True)
        self._cache = (Y, f, y_mid, f_mid)
        return np.concatenate([bc, phi.T.ravel()])

    def _rhs_jacobian(self, x, Y, f):
        d = self.d
        J = np.empty((d, d, x.size))
        with np.errstate(all="ignore"):
            for j in range(d):
                if self.complex_step:
                    Yc = Y.astype(complex)
                    Yc[j] += 1j * _COMPLEX_STEP
                    J[:, j, :] = np.imag(self.rhs(x, Yc, dtype=complex)) / _COMPLEX_STEP
                else:
                    step = _FD_STEP * (1.0 + np.abs(Y[j]))
                    Yp = Y.copy()
                    Yp[j] += step
                    J[:, j, :] = (self.rhs(x, Yp) - f) / step
        return J

    def _bc_jacobian(self, ya, yb):
        d = self.d
        bc = self.problem.boundary
        Ja = np.empty((d, d))
        Jb = np.empty((d, d))
        if self.complex_step:
            for j in range(d):
                e = np.zeros(d, dtype=complex)
                e[j] = 1j * _COMPLEX_STEP
                Ja[:, j] = np.imag(np.asarray(bc(ya + e, yb.astype(complex)))) / _COMPLEX_STEP
                Jb[:, j] = np.imag(np.asarray(bc(ya.astype(complex), yb + e))) / _COMPLEX_STEP
            return Ja, Jb
        bc0 = np.asarray(bc(ya, yb), dtype=float)
        for j in range(d):
            e = np.zeros(d)
            e[j] = _FD_STEP * (1.0 + abs(ya[j]))
            Ja[:, j] = (np.asarray(bc(ya + e, yb)) - bc0) / e[j]
            e[j] = 0.0
            e[j] = _FD_STEP * (1.0 + abs(yb[j]))
            Jb[:, j] = (np.asarray(bc(ya, yb + e)) - bc0) / e[j]
        return Ja, Jb

    def jacobian(self, flat):
        if self._cache_key is None or not np.array_equal(self._cache_key, flat):
            self.residual(flat)
        Y, f, y_mid, f_mid = self._cache
        d, h = self.d, self.h
        Jn = self._rhs_jacobian(self.x, Y, f)
        Jm = self._rhs_jacobian(self.x_mid, y_mid, f_mid)
        # (N, d, d) arrays
        Jl = np.moveaxis(Jn[:, :, :-1], 2, 0)
        Jr = np.moveaxis(Jn[:, :, 1:], 2, 0)
        Jm = np.moveaxis(Jm, 2, 0)
        eye = np.eye(d)[None]
        hh = h[:, None, None]
        with np.errstate(all="ignore"):
            dmid_l = 0.5 * eye + (hh / 8.0) * Jl
            dmid_r = 0.5 * eye - (hh / 8.0) * Jr
            A = -eye - (hh / 6.0) * (Jl + 4.0 * Jm @ dmid_l)
            B = eye - (hh / 6.0) * (Jr + 4.0 * Jm @ dmid_r)
        s = self.scale[:, None, None]
        Ja, Jb = self._bc_jacobian(Y[:, 0], Y[:, -1])
        data = np.concatenate([Ja.ravel(), Jb.ravel(), (s * A).ravel(), (s * B).ravel()])
        size = self.n * d
        return sp.csc_matrix((data, (self._rows, self._cols)), shape=(size, size))

    @property
    def evaluated(self):
        return self._cache


def assemble_collocation_system(problem: ProblemSpec, mesh, guess, settings: SolverSettings):
    """Global collocation residual at ``guess``.

    ``guess`` holds one ``d``-vector per node, either as ``(d, n)`` or
    ``(n, d)``. Returns ``(residual, evaluations)`` where the residual has ``d``
    boundary components followed by ``d`` components per subinterval.
    """
    x = _check_mesh(mesh, problem.interval)
    Y = np.asarray(guess, dtype=float)
    d = problem.dimension
    if Y.shape == (x.size, d) and Y.shape != (d, x.size):
        Y = Y.T
    if Y.shape != (d, x.size):
        raise ValueError(f"guess must have shape {(d, x.size)}, got {Y.shape}")
    counter = _CountingRHS(problem.rhs)
    system = _Collocation(problem, x, settings, counter)
    return system.residual(Y.T.ravel()), counter.evaluations


def _norm(v) -> float:
    v = np.asarray(v)
    if v.size == 0:
        return 0.0
    n = float(np.max(np.abs(v)))
    return n if math.isfinite(n) else math.inf


def _linear_solve(J, rhs):
    if sp.issparse(J):
        return splu(sp.csc_matrix(J)).solve(rhs)
    J = np.atleast_2d(np.asarray(J, dtype=float))
    return np.linalg.solve(J, rhs.reshape(J.shape[0])).reshape(rhs.shape)


def newton_armijo_solve(residual_fn, jacobian_fn, initial, settings: SolverSettings):
    """Damped Newton iteration with Armijo backtracking.

    ``residual_fn(x)`` and ``jacobian_fn(x)`` both return ``(value, evaluations)``.
    Each iteration solves ``J dx = -F`` and probes step lengths 1, 1/2, 1/4, ...
    (at most ``newton_armijo_probes`` of them) until
    ``|F(x + t dx)| <= (1 - sigma t) |F(x)|``; without success the last probe is
    taken. At least one iteration is always performed.

    Returns ``(x, NewtonReport, evaluations)``.
    """
    shape = np.shape(initial)
    x = np.array(initial, dtype=float).ravel()
    evaluations = 0

    def residual(z):
        nonlocal evaluations
        F, n = residual_fn(z.reshape(shape))
        evaluations += n
        return np.asarray(F, dtype=float).ravel()

    def finish(status, iterations, norm):
        return x.reshape(shape), NewtonReport(status, iterations, norm), evaluations

    F = residual(x)
    norm = _norm(F)
    if not math.isfinite(norm):
        return finish(NewtonStatus.DIVERGED, 0, math.inf)

    iterations = 0
    while iterations < settings.newton_max_iterations:
        J, n = jacobian_fn(x.reshape(shape))
        evaluations += n
        try:
            with np.errstate(all="ignore"):
                step = _linear_solve(J, -F)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            return finish(NewtonStatus.DIVERGED, iterations, norm)
        if not np.all(np.isfinite(step)):
            return finish(NewtonStatus.DIVERGED, iterations, norm)
        lam = 1.0
        for probe in range(settings.newton_armijo_probes):
            if probe:
                lam *= 0.5
            x_try = x + lam * step
            F_try = residual(x_try)
            norm_try = _norm(F_try)
            if norm_try <= (1.0 - ARMIJO_SIGMA * lam) * norm:
                break
        x, F, norm = x_try, F_try, norm_try
        iterations += 1
        if not math.isfinite(norm):
            return finish(NewtonStatus.DIVERGED, iterations, math.inf)
        if norm < settings.newton_tolerance:
            return finish(NewtonStatus.CONVERGED, iterations, norm)
    if norm < settings.newton_critical_tolerance:
        return finish(NewtonStatus.CRITICALLY_CONVERGED, iterations, norm)
    return finish(NewtonStatus.DIVERGED, iterations, norm)


def hermite_interpolate(nodes, values, derivatives, x) -> np.ndarray:
    """Evaluate the piecewise cubic Hermite interpolant at ``x`` (returns ``(d, m)``)."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    h = nodes[i + 1] - nodes[i]
    t = (x - nodes[i]) / h
    t2, t3 = t * t, t * t * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    Y, F = values, derivatives
    return h00 * Y[:, i] + h10 * h * F[:, i] + h01 * Y[:, i + 1] + h11 * h * F[:, i + 1]


def _interval_defects(rhs, x, Y, f):
    """Scaled and absolute defect of the cubic interpolant for every subinterval."""
    h = np.diff(x)
    N = h.size
    scaled = np.zeros(N)
    absolute = np.zeros(N)
    with np.errstate(all="ignore"):
        for t in _LOBATTO_INTERIOR:
            t2 = t * t
            dh00 = (6 * t2 - 6 * t) / h
            dh10 = 3 * t2 - 4 * t + 1
            dh01 = (-6 * t2 + 6 * t) / h
            dh11 = 3 * t2 - 2 * t
            xs = x[:-1] + t * h
            S = hermite_interpolate(x, Y, f, xs)
            dS = dh00 * Y[:, :-1] + dh10 * f[:, :-1] + dh01 * Y[:, 1:] + dh11 * f[:, 1:]
            fs = rhs(xs, S)
            defect = np.max(np.abs(dS - fs), axis=0)
            size = np.max(np.abs(fs), axis=0)
            absolute = np.maximum(absolute, defect)
            scaled = np.maximum(scaled, defect / (RELATIVE_TOLERANCE * (1.0 + size)))
    # non-finite defects must force refinement and never be accepted
    scaled[~np.isfinite(scaled)] = np.inf
    absolute[~np.isfinite(absolute)] = np.inf
    return scaled, absolute


def estimate_interval_residuals(problem: ProblemSpec, solution: MeshSolution):
    """Defect per subinterval in units of the relative tolerance.

    Returns ``(residuals, evaluations)``. The defect ``|S' - f(x, S)|`` of the
    cubic interpolant ``S`` is sampled at the two interior Lobatto points of
    each interval and divided by ``rtol * (1 + |f(x, S)|)``.
    """
    counter = _CountingRHS(problem.rhs)
    x = _check_mesh(solution.nodes, problem.interval)
    f = solution.derivatives
    if f is None:
        f = counter(x, solution.values)
    scaled, _ = _interval_defects(counter, x, solution.values, f)
    return scaled, counter.evaluations


def adapt_mesh(mesh, residuals, settings: SolverSettings, min_nodes: int | None = None) -> np.ndarray:
    """Refine and coarsen ``mesh`` from scaled per-interval ``residuals``.

    Intervals with residual above 1 get their midpoint, or two equally spaced
    points once the residual exceeds ``add_factor``. A node whose own two
    intervals and the next one all fall below ``0.1 * remove_factor`` is
    dropped; removals never touch adjacent nodes and never bring the node
    count below ``min_nodes`` (default: the size of the incoming mesh when
    nothing is refined, i.e. no net shrinking below it).

    Raises :class:`MeshBudgetExceeded` when the new mesh is larger than
    ``settings.max_grid_points``.
    """
    x = _check_mesh(mesh)
    r = np.asarray(residuals, dtype=float)
    N = x.size - 1
    if r.shape != (N,):
        raise ValueError(f"expected {N} residuals, got {r.shape}")
    if min_nodes is None:
        min_nodes = INITIAL_INTERVALS + 1

    refine = r > 1.0
    double = r > settings.add_factor
    added = int(refine.sum() + (refine & double).sum())

    removed = np.zeros(x.size, dtype=bool)
    threshold = 0.1 * settings.remove_factor
    if threshold > 0:
        small = r < threshold
        budget = x.size + added - min_nodes
        j = 1
        while j <= N - 2 and budget > 0:
            if small[j - 1] and small[j] and small[j + 1]:
                removed[j] = True
                budget -= 1
                j += 2
            else:
                j += 1

    out = []
    for i in range(N):
        if not removed[i]:
            out.append(x[i])
        if refine[i]:
            h = x[i + 1] - x[i]
            if double[i]:
                out.extend((x[i] + h / 3.0, x[i] + 2.0 * h / 3.0))
            else:
                out.append(x[i] + 0.5 * h)
    out.append(x[-1])
    new = np.asarray(out)
    if new.size > settings.max_grid_points:
        raise MeshBudgetExceeded(new.size, settings.max_grid_points)
    return new


def _bisect(x):
    out = np.empty(2 * x.size - 1)
    out[0::2] = x
    out[1::2] = 0.5 * (x[:-1] + x[1:])
    return out


def _newton_on_mesh(problem, x, Y, settings, counter):
    system = _Collocation(problem, x, settings, counter)
    flat, report, _ = newton_armijo_solve(
        lambda z: (system.residual(z), 0),
        lambda z: (system.jacobian(z), 0),
        Y.T.ravel(),
        settings,
    )
    Y = flat.reshape(x.size, problem.dimension).T
    f = system.evaluated[1] if report.converged else None
    return Y, f, report


def solve_on_mesh(problem: ProblemSpec, mesh, settings: SolverSettings | None = None, guess=None):
    """Run Newton-Armijo on a fixed mesh without any adaptation.

    Returns ``(MeshSolution | None, NewtonReport, evaluations)``; the solution
    is ``None`` when Newton diverged.
    """
    settings = settings or SolverSettings.default()
    x = _check_mesh(mesh, problem.interval)
    counter = _CountingRHS(problem.rhs)
    Y0 = problem.initial_guess(x) if guess is None else np.asarray(guess, dtype=float)
    Y, f, report = _newton_on_mesh(problem, x, Y0, settings, counter)
    if not report.converged:
        return None, report, counter.evaluations
    _, absolute = _interval_defects(counter, x, Y, f)
    return MeshSolution(x, Y, absolute, f), report, counter.evaluations


def solve_bvp(problem: ProblemSpec, settings: SolverSettings | None = None):
    """Adaptive solve of ``problem``; returns ``(SolverOutcome, MeshSolution | None)``.

    Starts from :data:`INITIAL_INTERVALS` uniform intervals and the problem's
    initial guess. A diverged Newton solve bisects the mesh and restarts from
    the last converged solution (or the initial guess); a converged one is
    accepted when every scaled interval residual is at most 1 and otherwise
    adapted. The run fails when the mesh budget is exceeded or after
    :data:`MAX_OUTER_ITERATIONS` rounds.
    """
    settings = settings or SolverSettings.default()
    a, b = problem.interval
    counter = _CountingRHS(problem.rhs)
    x = np.linspace(a, b, INITIAL_INTERVALS + 1)
    Y = problem.initial_guess(x)
    min_nodes = x.size
    last = None
    max_residuum = math.nan
    divergences = 0

    def failed():
        return SolverOutcome(False, counter.evaluations, int(x.size), max_residuum), None

    for _ in range(MAX_OUTER_ITERATIONS):
        Y, f, report = _newton_on_mesh(problem, x, Y, settings, counter)
        if not report.converged:
            divergences += 1
            if divergences >= MAX_CONSECUTIVE_DIVERGENCES or 2 * x.size - 1 > settings.max_grid_points:
                return failed()
            x = _bisect(x)
            Y = hermite_interpolate(*last, x) if last else problem.initial_guess(x)
            continue
        divergences = 0
        scaled, absolute = _interval_defects(counter, x, Y, f)
        max_residuum = float(np.max(absolute))
        if np.max(scaled) <= 1.0:
            solution = MeshSolution(x, Y, absolute, f)
            outcome = SolverOutcome(True, counter.evaluations, int(x.size), max_residuum)
            return outcome, solution
        last = (x, Y, f)
        try:
            x_new = adapt_mesh(x, scaled, settings, min_nodes)
        except MeshBudgetExceeded:
            return failed()
        Y = hermite_interpolate(x, Y, f, x_new)
        x = x_new
    return failed()
