import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvptune.dataset import generate
from bvptune.optimize import (
    NoFeasibleRegionError,
    Objective,
    ObjectiveSpec,
    crowding_distance,
    dominates,
    hypervolume,
    nondominated_mask,
    nondominated_sort,
    optimize_settings,
    read_front_csv,
    validate_against_solver,
)
from bvptune.settings import SETTING_NAMES, SETTING_RANGES, SolverSettings
from bvptune.surrogate import ModelKind, train_regressor

RF = SETTING_NAMES.index("remove_factor")
TOL = SETTING_NAMES.index("newton_tolerance")


class ConstantClassifier:
    decision_threshold = 0.5

    def __init__(self, p=1.0):
        self.p = p

    def predict_proba(self, cases, X):
        return np.full(len(X), self.p)


class ToleranceClassifier(ConstantClassifier):
    """Feasible only for loose Newton tolerances."""

    def predict_proba(self, cases, X):
        return np.where(np.asarray(X)[:, TOL] > 1e-6, 0.9, 0.1)


class LineRegressor:
    """Objectives (t, 1 - t, t^2) with t = remove_factor / 2 in [0, 1]."""

    def predict(self, X):
        t = np.asarray(X)[:, RF] / 2.0
        return np.column_stack([t, 1.0 - t, (t - 0.3) ** 2])


def _brute_fronts(P):
    P = [tuple(p) for p in P]
    remaining = list(range(len(P)))
    fronts = []
    while remaining:
        front = [i for i in remaining if not any(dominates(P[j], P[i]) for j in remaining if j != i)]
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def test_sort_example():
    assert nondominated_sort([(1, 2), (2, 1), (3, 3)]) == [[0, 1], [2]]


def test_sort_single_duplicate_and_empty():
    assert nondominated_sort([(4, 4)]) == [[0]]
    assert nondominated_sort([(1, 1), (1, 1)]) == [[0, 1]]
    assert nondominated_sort([]) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 100), st.integers(1, 3), st.integers(0, 10**6))
def test_sort_matches_brute_force(n, m, seed):
    rng = np.random.default_rng(seed)
    P = rng.integers(0, 6, size=(n, m)).astype(float)
    fronts = nondominated_sort(P)
    assert fronts == _brute_fronts(P)
    np.testing.assert_array_equal(nondominated_mask(P, chunk=7), np.isin(np.arange(n), fronts[0]))


def test_crowding_examples():
    assert np.all(np.isinf(crowding_distance([(0, 1), (1, 0)])))
    assert np.all(np.isinf(crowding_distance([(0.5, 0.5)])))
    d = crowding_distance([(0, 2), (1, 1), (2, 0)])
    assert np.isinf(d[0]) and np.isinf(d[2])
    assert d[1] == pytest.approx(2.0)
    # second objective constant: only the first contributes
    d = crowding_distance([(0, 5), (1, 5), (3, 5), (4, 5)])
    assert d[1] == pytest.approx(3 / 4) and d[2] == pytest.approx(3 / 4)


def test_hypervolume_oracles():
    assert hypervolume([(0.5,)], (1.0,)) == 0.5
    assert hypervolume([(0, 0)], (1, 2)) == 2.0
    assert hypervolume([(0, 1), (1, 0)], (2, 2)) == pytest.approx(3.0)
    assert hypervolume([(0, 0, 0)], (1, 2, 3)) == pytest.approx(6.0)
    # Monte Carlo oracle in three dimensions
    rng = np.random.default_rng(0)
    P = rng.random((12, 3))
    ref = np.ones(3)
    Z = rng.random((200000, 3))
    dominated = np.zeros(len(Z), bool)
    for p in P:
        dominated |= np.all(Z >= p, axis=1)
    assert hypervolume(P, ref) == pytest.approx(dominated.mean(), abs=5e-3)


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec((), "N20")
    with pytest.raises(ValueError):
        ObjectiveSpec(("evals", "evals"), "N20")
    with pytest.raises(ValueError):
        ObjectiveSpec(("evals",), "N20", budget=10)
    assert ObjectiveSpec(("evals", "residuum"), "N20").objectives == (Objective.ODE_EVALUATIONS, Objective.MAX_RESIDUUM)


def test_synthetic_line_front_hypervolume():
    spec = ObjectiveSpec(("evals", "grid"), "N20", budget=3200, seed=0)
    front = optimize_settings(spec, ConstantClassifier(), LineRegressor())
    F = front.objective_matrix()
    np.testing.assert_allclose(F.sum(axis=1), 1.0, atol=1e-12)
    # exact dominated area of the segment from (0, 1) to (1, 0) inside the (1.1, 1.1) box
    assert front.hypervolume((1.1, 1.1)) >= 0.9 * 0.71


def _postconditions(front, classifier):
    F = front.objective_matrix()
    for i, j in itertools.permutations(range(len(F)), 2):
        assert not dominates(F[i], F[j])
    X = np.array([p.settings.as_vector() for p in front.points])
    assert np.all(classifier.predict_proba(None, X) >= classifier.decision_threshold)
    for k, r in enumerate(SETTING_RANGES):
        assert np.all((X[:, k] >= r.lower) & (X[:, k] <= r.upper))


@pytest.mark.parametrize("objectives", [("evals", "grid"), ("evals", "residuum"), ("evals", "grid", "residuum")])
def test_front_postconditions_under_constraint(objectives):
    clf = ToleranceClassifier()
    front = optimize_settings(ObjectiveSpec(objectives, "N20", budget=640, seed=2), clf, LineRegressor())
    assert len(front.points) >= 1
    _postconditions(front, clf)
    assert len(front.all_trials) == 640
    assert front.trial_feasible.any() and not front.trial_feasible.all()


def test_single_objective_gives_minimizer():
    front = optimize_settings(ObjectiveSpec(("residuum",), "N20", budget=640, seed=1), ConstantClassifier(), LineRegressor())
    assert len(front.points) == 1
    assert front.points[0].predicted[0] == front.trial_predicted[:, 0].min()
    assert front.points[0].predicted[0] < 1e-3


def test_monotone_budget_and_determinism():
    clf, reg = ToleranceClassifier(), LineRegressor()
    small = optimize_settings(ObjectiveSpec(("evals", "residuum"), "N20", budget=320, seed=5), clf, reg)
    large = optimize_settings(ObjectiveSpec(("evals", "residuum"), "N20", budget=640, seed=5), clf, reg)
    again = optimize_settings(ObjectiveSpec(("evals", "residuum"), "N20", budget=640, seed=5), clf, reg)
    ref = (1.1, 1.1)
    assert large.hypervolume(ref) >= small.hypervolume(ref)
    np.testing.assert_array_equal(large.trial_settings, again.trial_settings)
    assert large.records() == again.records()


def test_random_baseline_sampler():
    front = optimize_settings(ObjectiveSpec(("evals", "grid"), "N20", budget=640, seed=0, sampler="random"), ConstantClassifier(), LineRegressor())
    _postconditions(front, ConstantClassifier())


def test_all_infeasible_raises():
    with pytest.raises(NoFeasibleRegionError):
        optimize_settings(ObjectiveSpec(("evals", "grid"), "N20", budget=3200), ConstantClassifier(0.0), LineRegressor())


def test_front_csv_round_trip(tmp_path):
    front = optimize_settings(ObjectiveSpec(("evals", "grid"), "N20", budget=320), ConstantClassifier(), LineRegressor())
    back = read_front_csv(front.to_csv(tmp_path / "f.csv"), "N20")
    assert back.records() == front.records()
    assert list(front.to_frame().columns) == front.columns


@pytest.fixture(scope="module")
def calibration_regressor():
    return train_regressor(generate(["CAL"], 200, seed=1), "CAL", ModelKind.RF, {"n_trees": 20})


def test_validate_calibration_front(calibration_regressor):
    front = optimize_settings(ObjectiveSpec(("evals", "residuum"), "CAL", budget=320, seed=0), ConstantClassifier(), calibration_regressor)
    report = validate_against_solver(front)
    assert len(report.rows) == len(front.points)
    assert report.success_fraction == 1.0
    assert all(r["actual_grid_points"] == 11 for r in report.rows)
