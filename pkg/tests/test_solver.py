import math
from dataclasses import replace

import numpy as np
import pytest

from bvptune.settings import SolverSettings
from bvptune.solver import (
    RELATIVE_TOLERANCE,
    InvalidMeshError,
    MeshBudgetExceeded,
    NewtonStatus,
    ProblemSpec,
    adapt_mesh,
    assemble_collocation_system,
    estimate_interval_residuals,
    newton_armijo_solve,
    solve_bvp,
    solve_on_mesh,
)
from bvptune.testbench import get_problem

DEFAULT = SolverSettings.default()
NO_SCALING = DEFAULT.replace(use_collocation_scaling=False)


def _system(ddy, alpha, beta, a=0.0, b=1.0, exact=None, guess=None):
    def rhs(x, y):
        return np.vstack([y[1], ddy(x, y[0], y[1])])

    def bc(ya, yb):
        return np.array([ya[0] - alpha, yb[0] - beta])

    return ProblemSpec("T", 2, (a, b), rhs, bc, False, exact_solution=exact, guess=guess)


# --- collocation residual ---------------------------------------------------------


def test_calibration_residual_vanishes_on_exact_guess():
    p = get_problem("CAL")
    x = np.linspace(0, 1, 7)
    Y = np.vstack([x, np.ones_like(x)])
    F, evals = assemble_collocation_system(p, x, Y, DEFAULT)
    assert F.shape == (2 * 7,)
    assert np.max(np.abs(F)) <= 1e-12
    assert evals >= 1


@pytest.mark.parametrize("n", [2, 5, 11, 40])
def test_residual_length(n):
    p = get_problem("N33")
    x = np.linspace(0, 1, n)
    F, _ = assemble_collocation_system(p, x, np.zeros((4, n)), DEFAULT)
    assert F.size == 4 * n


def _simpson_oracle(problem, x, Y, scaling):
    """Direct per-interval evaluation of the three-stage Lobatto IIIA condition."""
    a, b = problem.interval
    N = x.size - 1
    blocks = [np.asarray(problem.boundary(Y[:, 0], Y[:, -1]), dtype=float)]
    for i in range(N):
        h = x[i + 1] - x[i]
        y0, y1 = Y[:, i], Y[:, i + 1]
        f0 = problem.rhs(np.array([x[i]]), y0[:, None])[:, 0]
        f1 = problem.rhs(np.array([x[i + 1]]), y1[:, None])[:, 0]
        ym = (y0 + y1) / 2 - h / 8 * (f1 - f0)
        fm = problem.rhs(np.array([x[i] + h / 2]), ym[:, None])[:, 0]
        phi = y1 - y0 - h / 6 * (f0 + 4 * fm + f1)
        if scaling:
            phi = phi * (b - a) / (N * h)
        blocks.append(phi)
    return np.concatenate(blocks)


@pytest.mark.parametrize("case", ["N22", "N19", "N33"])
@pytest.mark.parametrize("settings", [DEFAULT, NO_SCALING], ids=["scaled", "unscaled"])
def test_residual_matches_standalone_simpson_oracle(case, settings):
    p = get_problem(case)
    x = np.linspace(*p.interval, 11)
    for Y in (np.zeros((p.dimension, 11)), p.initial_guess(x) + 0.1 * np.sin(3 * x)):
        F, _ = assemble_collocation_system(p, x, Y, settings)
        oracle = _simpson_oracle(p, x, Y, settings.use_collocation_scaling)
        # residual is ordered boundary rows first, then one block per interval
        np.testing.assert_allclose(F, oracle, rtol=1e-12, atol=1e-13)


def test_nonuniform_mesh_scaling_oracle():
    p = get_problem("N23")
    x = np.array([0.0, 0.05, 0.3, 0.31, 0.7, 1.0])
    Y = p.initial_guess(x)
    F, _ = assemble_collocation_system(p, x, Y, DEFAULT)
    np.testing.assert_allclose(F, _simpson_oracle(p, x, Y, True), rtol=1e-12, atol=1e-13)


def test_guess_accepts_transposed_layout():
    p = get_problem("N20")
    x = np.linspace(0, 1, 6)
    Y = p.initial_guess(x)
    np.testing.assert_array_equal(
        assemble_collocation_system(p, x, Y, DEFAULT)[0], assemble_collocation_system(p, x, Y.T, DEFAULT)[0]
    )


@pytest.mark.parametrize("mesh", [[0.0, 0.5, 0.4, 1.0], [0.0, 0.5, 0.5, 1.0], [0.1, 0.5, 1.0], [0.0]])
def test_invalid_mesh(mesh):
    p = get_problem("N20")
    with pytest.raises(InvalidMeshError):
        assemble_collocation_system(p, mesh, np.zeros((2, len(mesh))), DEFAULT)


# --- Newton-Armijo ---------------------------------------------------------------


def _scalar(x):
    return np.array([x[0] ** 2 - 4.0]), 1


def _scalar_jac(x):
    return np.array([[2.0 * x[0]]]), 1


def test_newton_affine_one_iteration():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    b = rng.normal(size=6)
    x, rep, _ = newton_armijo_solve(lambda z: (A @ z - b, 0), lambda z: (A, 0), rng.normal(size=6) * 100, DEFAULT)
    assert rep.status is NewtonStatus.CONVERGED
    assert rep.iterations == 1
    assert rep.final_residual_norm <= 1e-12 * 100
    np.testing.assert_allclose(A @ x, b, atol=1e-10)


def test_newton_scalar_converges():
    s = DEFAULT.replace(newton_tolerance=1e-10, newton_max_iterations=20)
    x, rep, evals = newton_armijo_solve(_scalar, _scalar_jac, np.array([3.0]), s)
    assert rep.status is NewtonStatus.CONVERGED
    assert abs(x[0] - 2.0) <= 1e-8
    assert rep.final_residual_norm < 1e-10
    assert evals == 1 + 2 * rep.iterations  # one residual per probe plus one Jacobian


def test_newton_single_step_critically_converged():
    s = DEFAULT.replace(newton_tolerance=1e-12, newton_max_iterations=1, newton_critical_tolerance=100.0)
    x, rep, _ = newton_armijo_solve(_scalar, _scalar_jac, np.array([3.0]), s)
    # one Newton step from 3 lands on 13/6, where F = 169/36 - 4 = 25/36
    assert x[0] == pytest.approx(13 / 6, rel=1e-15)
    assert rep.final_residual_norm == pytest.approx(25 / 36, rel=1e-14)
    assert rep.status is NewtonStatus.CRITICALLY_CONVERGED
    assert rep.iterations == 1


def test_newton_critical_tolerance_too_small_diverges():
    s = DEFAULT.replace(newton_max_iterations=1, newton_critical_tolerance=0.5)
    _, rep, _ = newton_armijo_solve(_scalar, _scalar_jac, np.array([3.0]), s)
    assert rep.status is NewtonStatus.DIVERGED


def test_newton_armijo_halving_takes_last_probe():
    # F(x) = atan(x) from far away: the full step overshoots, halving helps
    f = lambda z: (np.arctan(z), 0)
    j = lambda z: (np.array([[1.0 / (1.0 + z[0] ** 2)]]), 0)
    s = DEFAULT.replace(newton_max_iterations=30, newton_armijo_probes=10, newton_tolerance=1e-10)
    x, rep, _ = newton_armijo_solve(f, j, np.array([10.0]), s)
    assert rep.status is NewtonStatus.CONVERGED and abs(x[0]) < 1e-9
    # without damping plain Newton from 10 blows up
    s1 = s.replace(newton_armijo_probes=1, newton_max_iterations=5)
    _, rep1, _ = newton_armijo_solve(f, j, np.array([10.0]), s1)
    assert rep1.status is NewtonStatus.DIVERGED


def test_newton_singular_and_nonfinite_diverge():
    _, rep, _ = newton_armijo_solve(lambda z: (np.array([1.0, 1.0]), 0), lambda z: (np.zeros((2, 2)), 0), np.zeros(2), DEFAULT)
    assert rep.status is NewtonStatus.DIVERGED
    _, rep, _ = newton_armijo_solve(lambda z: (np.array([np.nan]), 0), lambda z: (np.eye(1), 0), np.zeros(1), DEFAULT)
    assert rep.status is NewtonStatus.DIVERGED


def test_newton_report_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = SolverSettings.from_vector(
            [1000, 10 ** rng.uniform(-12, 2), rng.integers(1, 11), rng.integers(1, 8), 10 ** rng.uniform(-12, -2), 100, 0.5, 1]
        )
        x0 = np.array([rng.uniform(0.3, 30)])
        _, rep, _ = newton_armijo_solve(_scalar, _scalar_jac, x0, s)
        if rep.status is NewtonStatus.CONVERGED:
            assert rep.final_residual_norm < s.newton_tolerance
        elif rep.status is NewtonStatus.CRITICALLY_CONVERGED:
            assert s.newton_tolerance <= rep.final_residual_norm < s.newton_critical_tolerance
            assert rep.iterations == s.newton_max_iterations


# --- residual estimation -------------------------------------------------------------


def test_cubic_solution_has_zero_residual():
    p = _system(lambda x, y, dy: 6 * x, 0.0, 1.0, exact=lambda x: np.vstack([x**3, 3 * x**2]))
    sol, rep, _ = solve_on_mesh(p, np.linspace(0, 1, 6))
    assert rep.converged
    r, evals = estimate_interval_residuals(p, sol)
    assert np.max(r) <= 1e-9
    assert evals == 2 * 5
    np.testing.assert_allclose(sol.values, p.exact_solution(sol.nodes), atol=1e-12)


def test_residual_decay_under_halving():
    # the defect of the cubic collocant is third order, so the ratio tends to 8
    p = _system(lambda x, y, dy: y, 1.0, math.e)
    r = []
    for n in (10, 20, 40):
        sol, rep, _ = solve_on_mesh(p, np.linspace(0, 1, n + 1))
        r.append(np.max(estimate_interval_residuals(p, sol)[0]))
    for coarse, fine in zip(r, r[1:]):
        assert 8 <= coarse / fine <= 32


def test_single_interval_defect_oracle():
    def rhs(x, y):
        return y

    def bc(ya, yb):
        return np.array([ya[0] - 1.0])

    p = ProblemSpec("exp", 1, (0.0, 1.0), rhs, bc, True, guess=lambda x: np.ones((1, x.size)))
    sol, rep, _ = solve_on_mesh(p, [0.0, 1.0])
    assert rep.converged
    y0, y1 = sol.values[0]
    # the Simpson condition is linear here: y1 = y0 (1 + 1/2 + 1/6 ... ) solved exactly
    ym = (y0 + y1) / 2 - (y1 - y0) / 8
    assert y1 - y0 - (y0 + 4 * ym + y1) / 6 == pytest.approx(0.0, abs=1e-14)
    worst = 0.0
    for t in (0.5 - math.sqrt(5) / 10, 0.5 + math.sqrt(5) / 10):
        # cubic Hermite with slopes f = y at both ends
        S = (2 * t**3 - 3 * t**2 + 1) * y0 + (t**3 - 2 * t**2 + t) * y0 + (-2 * t**3 + 3 * t**2) * y1 + (t**3 - t**2) * y1
        dS = (6 * t**2 - 6 * t) * y0 + (3 * t**2 - 4 * t + 1) * y0 + (-6 * t**2 + 6 * t) * y1 + (3 * t**2 - 2 * t) * y1
        worst = max(worst, abs(dS - S) / (RELATIVE_TOLERANCE * (1 + abs(S))))
    r, _ = estimate_interval_residuals(p, sol)
    assert r.shape == (1,)
    assert r[0] == pytest.approx(worst, rel=1e-12)


# --- mesh adaptation ---------------------------------------------------------------


def test_adapt_no_rule_fires():
    x = np.linspace(0, 1, 11)
    out = adapt_mesh(x, np.full(10, 0.5), DEFAULT.replace(remove_factor=0.0))
    np.testing.assert_array_equal(out, x)


def test_adapt_single_interval_refinement():
    s = DEFAULT.replace(add_factor=100.0)
    np.testing.assert_allclose(adapt_mesh([0.0, 1.0], [5.0], s, min_nodes=2), [0.0, 0.5, 1.0])
    np.testing.assert_allclose(adapt_mesh([0.0, 1.0], [500.0], s, min_nodes=2), [0.0, 1 / 3, 2 / 3, 1.0])
    # the boundary between the two rules: r equal to add_factor still gets one point
    assert adapt_mesh([0.0, 1.0], [100.0], s, min_nodes=2).size == 3


def test_adapt_coarsening_window_and_limits():
    x = np.linspace(0, 1, 21)
    r = np.zeros(20)
    s = DEFAULT.replace(remove_factor=1.0)
    out = adapt_mesh(x, r, s, min_nodes=11)
    assert out.size >= 11
    assert out[0] == 0.0 and out[-1] == 1.0
    removed = np.setdiff1d(x, out)
    # never two neighbouring nodes in one pass
    idx = np.searchsorted(x, removed)
    assert np.all(np.diff(idx) >= 2)
    # residual above the threshold protects the nodes around it
    r2 = np.zeros(20)
    r2[5] = 0.2  # >= 0.1 * remove_factor
    out2 = adapt_mesh(x, r2, s, min_nodes=2)
    assert x[5] in out2 and x[6] in out2
    # remove_factor = 0 disables coarsening
    np.testing.assert_array_equal(adapt_mesh(x, r, DEFAULT.replace(remove_factor=0.0)), x)
    # never below min_nodes
    assert adapt_mesh(x, r, s, min_nodes=21).size == 21


def test_adapt_budget():
    x = np.linspace(0, 1, 101)
    with pytest.raises(MeshBudgetExceeded):
        adapt_mesh(x, np.full(100, 1e6), DEFAULT.replace(max_grid_points=150))


# --- full solver ---------------------------------------------------------------------


def test_calibration_problem_default_settings():
    outcome, sol = solve_bvp(get_problem("CAL"), DEFAULT)
    assert outcome.success
    assert outcome.grid_points == 11
    assert outcome.max_residuum <= 1e-12
    assert sol.interval_residuals.size == sol.nodes.size - 1
    assert np.max(sol.interval_residuals) == outcome.max_residuum


@pytest.mark.parametrize("case", ["L1", "L3", "L4", "L7", "N19", "N20", "N22", "N23", "N24", "N33"])
def test_every_problem_solves_under_defaults(case):
    p = get_problem(case)
    outcome, sol = solve_bvp(p, DEFAULT.replace(max_grid_points=10000))
    assert outcome.success
    assert outcome.ode_evaluations >= 1
    assert np.max(sol.interval_residuals) == outcome.max_residuum
    bc = p.boundary(sol.values[:, 0], sol.values[:, -1])
    assert np.max(np.abs(bc)) < 1e-6
    if p.exact_solution is not None:
        err = np.max(np.abs(sol.values - p.exact_solution(sol.nodes)))
        assert err < 1e-2


def test_budget_and_determinism_over_random_settings():
    rng = np.random.default_rng(11)
    p = get_problem("N22")
    for _ in range(25):
        u = rng.random(8)
        s = SolverSettings.from_vector(
            [100 + u[0] * 900, 10 ** (-12 + 14 * u[1]), 1 + 9 * u[2], 1 + 99 * u[3], 10 ** (-12 + 10 * u[4]), 10 ** (3 * u[5]), 2 * u[6], u[7]]
        )
        o1, _ = solve_bvp(p, s)
        o2, _ = solve_bvp(p, s)
        assert o1.grid_points <= s.max_grid_points
        assert (o1.success, o1.ode_evaluations, o1.grid_points) == (o2.success, o2.ode_evaluations, o2.grid_points)
        assert o1.max_residuum == o2.max_residuum or (math.isnan(o1.max_residuum) and math.isnan(o2.max_residuum))


def test_evaluation_counter_matches_injected_counter():
    base = get_problem("N23")
    calls = []

    def counting(x, y):
        calls.append(np.size(x))
        return base.rhs(x, y)

    p = replace(base, rhs=counting)
    for s in (DEFAULT, DEFAULT.replace(newton_max_iterations=2, add_factor=3.0)):
        calls.clear()
        outcome, _ = solve_bvp(p, s)
        assert outcome.ode_evaluations == sum(calls)


@pytest.mark.parametrize("case", ["L1", "L3", "L4"])
def test_linear_problems_insensitive_to_newton_settings(case):
    p = get_problem(case)
    ref, _ = solve_bvp(p, DEFAULT)
    for kw in (
        dict(newton_max_iterations=20),
        dict(newton_max_iterations=100),
        dict(newton_max_iterations=1, newton_tolerance=1e-2),
        dict(newton_armijo_probes=10, newton_critical_tolerance=1e-6),
        dict(newton_tolerance=1e-6, newton_max_iterations=50, newton_armijo_probes=1),
    ):
        o, _ = solve_bvp(p, DEFAULT.replace(**kw))
        assert o == ref


def test_forward_difference_mode_solves():
    p = replace(get_problem("N20"), jacobian="forward")
    outcome, _ = solve_bvp(p, DEFAULT)
    assert outcome.success


def test_failed_run_reports_counters():
    # an iteration cap of one with a tight critical tolerance cannot converge on a nonlinear problem
    s = DEFAULT.replace(newton_max_iterations=1, newton_critical_tolerance=1e-12)
    outcome, sol = solve_bvp(get_problem("N23"), s)
    assert not outcome.success and sol is None
    assert outcome.ode_evaluations > 0
    assert outcome.grid_points <= s.max_grid_points
