import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvptune.dataset import LabeledDataset
from bvptune.drift import PsiConfig, PsiLabel, label_for, psi, psi_from_proportions, psi_matrix


def test_two_bin_hand_value():
    rep = psi_from_proportions([0.25, 0.75], [0.5, 0.5])
    expected = 0.25 * math.log(2) - 0.25 * math.log(2 / 3)
    assert rep.value == pytest.approx(expected, abs=1e-12)
    assert rep.value == pytest.approx(0.2747, abs=1e-4)
    assert rep.label is PsiLabel.DIFFERENT
    assert sum(rep.contributions) == pytest.approx(rep.value)


def test_labels():
    assert label_for(0.05) is PsiLabel.STABLE
    assert label_for(0.1) is PsiLabel.SMALL_SHIFT
    assert label_for(0.25) is PsiLabel.SMALL_SHIFT
    assert label_for(0.2501) is PsiLabel.DIFFERENT


def test_identical_samples_give_zero():
    x = np.random.default_rng(0).exponential(size=500)
    assert psi(x, x).value == 0.0


def test_asymmetry_on_samples():
    rng = np.random.default_rng(1)
    a = rng.normal(size=2000)
    b = rng.normal(1.0, 2.0, size=2000)
    ab, ba = psi(a, b).value, psi(b, a).value
    assert ab > 0.25 and ba > 0.25
    assert abs(ab - ba) > 1e-3


def test_smoothing_keeps_value_finite():
    rep = psi(np.arange(100.0), np.full(50, 1000.0))
    assert np.isfinite(rep.value) and rep.value > 1.0


def test_collapsed_reference():
    rep = psi(np.array([1.0] * 30 + [2.0] * 30 + [3.0] * 40), np.array([1.0, 2.0, 3.0, 3.0]))
    assert rep.collapsed
    assert len(rep.contributions) == len(rep.edges) + 1 <= 3


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=80),
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=80),
)
def test_nonnegative_and_monotone_invariant(a, b):
    a, b = np.array(a), np.array(b)
    v = psi(a, b).value
    assert v >= 0.0
    # a strictly increasing map applied to both samples keeps every bin count
    w = psi(np.arctan(a / 100) , np.arctan(b / 100)).value
    assert w == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_errors():
    with pytest.raises(ValueError):
        psi([], [1.0])
    with pytest.raises(ValueError):
        PsiConfig(bins=1)
    with pytest.raises(ValueError):
        PsiConfig(epsilon=0)


def _toy():
    rng = np.random.default_rng(2)
    n = 300
    cases = np.repeat(["N19", "N20", "N22"], n)
    evals = np.concatenate([rng.poisson(50, n), rng.poisson(500, n), rng.poisson(5000, n)])
    S = np.tile(np.array([1000, 1.0, 2, 4, 1e-12, 100.0, 0.5, 1.0]), (3 * n, 1))
    return LabeledDataset(cases, S, np.ones(3 * n, bool), evals, np.full(3 * n, 20), np.full(3 * n, 0.01))


def test_matrix_shape_diagonal_and_skips(tmp_path):
    m = psi_matrix(_toy(), "ode_evaluations", cases=["N19", "N20", "N22", "N33"])
    assert m.values.shape == (3, 3)
    assert np.all(np.diag(m.values) == 0.0)
    off = m.values[~np.eye(3, dtype=bool)]
    assert np.all(off > 0.25)
    assert m.skipped == ("N33",)
    text = m.to_csv(tmp_path / "psi.csv").read_text().splitlines()
    assert text[0] == "reference,N19,N20,N22"
    assert text[1].split(",")[1] == "0.0000"


def test_matrix_target_selectable():
    m = psi_matrix(_toy(), "grid_points")
    assert np.all(m.values == 0.0)
    with pytest.raises(ValueError):
        psi_matrix(_toy(), "nonsense")
