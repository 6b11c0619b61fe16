from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bvptune.dataset import (
    INPUT_COLUMNS,
    OUTPUT_COLUMNS,
    InputScaler,
    LabeledDataset,
    RankNormalTransform,
    fit_transform,
    generate,
    load_csv,
    save_csv,
    split,
)
from bvptune.settings import SETTING_NAMES, SolverOutcome, SolverSettings


def test_row_counts(small_dataset):
    ds = small_dataset
    assert len(ds) == 1000
    assert set(ds.counts().values()) == {100}
    assert len(ds.cases) == 10
    assert not np.isnan(ds.settings).any()


def test_case_major_order(small_dataset):
    ds = small_dataset
    for k, case in enumerate(ds.cases):
        assert set(ds.test_cases[k * 100 : (k + 1) * 100]) == {case}
    # every case saw the same design
    np.testing.assert_array_equal(ds.settings[:100], ds.settings[100:200])


def test_failed_rows_flagged(small_dataset):
    ds = small_dataset
    failed = ~ds.success
    assert failed.any()
    assert ds.successful().success.all()
    assert np.isfinite(ds.successful().max_residuum).all()


def test_calibration_rows_all_succeed():
    ds = generate(["CAL"], 60, seed=3)
    assert ds.success.all()
    assert (ds.grid_points == 11).all()


def test_same_seed_byte_identical(tmp_path):
    a = save_csv(generate(["N20", "L3"], 25, seed=5), tmp_path / "a.csv")
    b = save_csv(generate(["N20", "L3"], 25, seed=5, workers=2), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()


def test_csv_round_trip(small_dataset, tmp_path):
    path = save_csv(small_dataset, tmp_path / "d.csv")
    header = path.read_text().splitlines()[0].split(",")
    assert tuple(header) == INPUT_COLUMNS + OUTPUT_COLUMNS
    back = load_csv(path)
    assert back.equals(small_dataset)
    assert back.metadata == small_dataset.metadata


def test_dataset_is_immutable(small_dataset):
    with pytest.raises(ValueError):
        small_dataset.settings[0, 0] = 1.0


def test_rows_view(small_dataset):
    case, s, o = small_dataset.row(3)
    assert isinstance(s, SolverSettings) and isinstance(o, SolverOutcome)
    rebuilt = LabeledDataset.from_rows(small_dataset.rows, small_dataset.metadata)
    assert rebuilt.equals(small_dataset)


def test_nan_settings_rejected():
    with pytest.raises(ValueError):
        LabeledDataset(["L1"], np.full((1, 8), np.nan), [True], [1], [11], [0.0])


def test_generate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate(["L1"], 0)
    with pytest.raises(KeyError):
        generate(["bogus"], 3)


# --- split ------------------------------------------------------------------------


def _strata(ds):
    return Counter(zip(ds.test_cases.tolist(), ds.success.tolist()))


def test_split_fractions(small_dataset):
    train, test = split(small_dataset, 0.2, seed=0)
    assert len(train) + len(test) == 1000
    full, tr, te = _strata(small_dataset), _strata(train), _strata(test)
    assert abs(len(test) - 200) <= len([k for k in full if full[k] >= 2])
    for key, size in full.items():
        if size >= 2:
            assert abs(te[key] - 0.2 * size) <= 1
        else:
            assert te[key] == 0
        assert tr[key] + te[key] == size


def test_split_union_is_original_multiset(small_dataset):
    train, test = split(small_dataset, 0.2, seed=1)

    def keys(ds):
        return Counter((c, tuple(s), o) for c, s, o in zip(ds.test_cases, ds.settings.tolist(), ds.ode_evaluations.tolist()))

    assert keys(train) + keys(test) == keys(small_dataset)


def test_split_deterministic(small_dataset):
    a = split(small_dataset, 0.2, seed=4)
    b = split(small_dataset, 0.2, seed=4)
    assert a[0].equals(b[0]) and a[1].equals(b[1])
    c = split(small_dataset, 0.2, seed=5)
    assert not c[1].equals(a[1])


def test_split_single_row_stratum_goes_to_train():
    s = SolverSettings.default()
    rows = [("N20", s, SolverOutcome(True, 10, 11, 0.1))] * 10 + [("N20", s, SolverOutcome(False, 5, 11, float("nan")))]
    train, test = split(LabeledDataset.from_rows(rows), 0.2, 0)
    assert (~train.success).sum() == 1
    assert len(test) == 2


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
def test_split_rejects_fraction(small_dataset, frac):
    with pytest.raises(ValueError):
        split(small_dataset, frac)


# --- transforms ---------------------------------------------------------------------


def test_rank_normal_moments():
    rng = np.random.default_rng(0)
    y = np.concatenate([rng.lognormal(5, 2, 1500), np.full(300, 42.0)])
    z = RankNormalTransform.fit(y).transform(y)
    assert abs(z.mean()) <= 0.05
    assert abs(z.std() - 1) <= 0.1


def test_rank_normal_constant_column():
    t = RankNormalTransform.fit(np.full(50, 7.0))
    np.testing.assert_array_equal(t.transform(np.full(50, 7.0)), 0.0)


def test_rank_normal_midranks():
    t = RankNormalTransform.fit([1.0, 2.0, 2.0, 3.0])
    # midranks 1, 2.5, 4 over n = 4
    from scipy.special import ndtri

    np.testing.assert_allclose(t.scores, ndtri((np.array([1, 2.5, 4]) - 0.5) / 4))


def test_rank_normal_round_trip_and_monotone():
    rng = np.random.default_rng(2)
    y = np.round(rng.lognormal(6, 1.5, 3000))
    t = RankNormalTransform.fit(y)
    pick = rng.choice(y, 100)
    assert np.max(np.abs(t.inverse(t.transform(pick)) - pick)) <= 1e-9
    grid = np.linspace(y.min() - 10, y.max() + 10, 500)
    assert np.all(np.diff(t.transform(grid)) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=200))
def test_rank_normal_round_trip_property(values):
    y = np.array(values)
    t = RankNormalTransform.fit(y)
    back = t.inverse(t.transform(y))
    assert np.max(np.abs(back - y)) <= 1e-9 * (1 + np.max(np.abs(y)))


def test_input_scaler(small_dataset):
    sc = InputScaler.fit(small_dataset.settings)
    z = sc.transform(small_dataset.settings)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)
    np.testing.assert_allclose(sc.inverse(z), small_dataset.settings, rtol=1e-9, atol=1e-12)
    # log10 features are standardized in log space
    k = SETTING_NAMES.index("newton_tolerance")
    lg = np.log10(small_dataset.settings[:, k])
    np.testing.assert_allclose(z[:, k], (lg - lg.mean()) / lg.std(), atol=1e-10)


def test_input_scaler_constant_feature():
    X = np.tile(SolverSettings.default().as_vector(), (20, 1))
    z = InputScaler.fit(X).transform(X)
    assert np.isfinite(z).all() and np.all(z == 0)


def test_fit_transform_uses_training_rows_only(small_dataset):
    train, test = split(small_dataset, 0.2, 0)
    ft = fit_transform(train)
    sc = InputScaler.fit(train.settings)
    np.testing.assert_array_equal(ft.input_scaler.mean, sc.mean)
    y = train.successful().targets()
    z = ft.transform_targets(y)
    assert np.max(np.abs(ft.inverse_targets(z) - y)) <= 1e-9 * (1 + np.abs(y).max())
    assert ft.output_transform["ode_evaluations"].values.max() == train.successful().ode_evaluations.max()
