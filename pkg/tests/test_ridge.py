"""Ridge solving, penalty selection, averaged fits and variable filtering."""

import numpy as np
import pytest

from ramp_transfer.ridge import (
    DEFAULT_LAMBDA_GRID,
    InsufficientRows,
    RidgeRegressor,
    SingularSystem,
    averaged_fit,
    filter_variables,
    ridge_fit,
    select_lambda,
    selection_to_csv,
    standardize,
)

from conftest import make_dataset


class TestRidgeFit:
    def test_one_dimensional_example(self):
        X = np.array([[1.0], [2.0]])
        y = np.array([1.0, 2.0])
        beta = ridge_fit(X, y, 5.0)
        assert beta[0] == pytest.approx(0.5, abs=1e-12)

    def test_huge_penalty_shrinks_to_zero(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        beta = ridge_fit(X, y, 1e12)
        assert np.linalg.norm(beta) <= 1e-6

    def test_zero_penalty_matches_least_squares(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(20, 5))
        y = rng.normal(size=20)
        beta = ridge_fit(X, y, 0.0)
        expected = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(beta, expected, atol=1e-10)

    def test_negative_penalty_rejected(self):
        with pytest.raises(ValueError):
            ridge_fit(np.eye(2), np.ones(2), -1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            ridge_fit(np.array([[np.nan]]), np.ones(1), 1.0)

    def test_rank_deficient_at_zero_penalty_rejected(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(SingularSystem):
            ridge_fit(X, np.array([1.0, 2.0, 3.5]), 0.0)


class TestStandardize:
    def test_simple_column(self):
        ds = make_dataset([[1.0], [2.0], [3.0]], [4.0, 5.0, 6.0])
        Xs, yc, record = standardize(ds, "After_y")
        np.testing.assert_allclose(Xs[:, 0], [-1.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(yc, [-1.0, 0.0, 1.0], atol=1e-12)
        assert record.target_mean == 5.0
        assert record.zero_variance == ()

    def test_constant_column_flagged(self):
        ds = make_dataset([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]],
                          [1.0, 2.0, 3.0])
        Xs, _, record = standardize(ds, "After_y")
        assert record.zero_variance == ("x1",)
        np.testing.assert_allclose(Xs[:, 1], 0.0, atol=1e-12)


class TestSelectLambda:
    def test_singleton_grid_returned(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        assert select_lambda(X, y, grid=(0.7,), folds=2) == 0.7

    def test_noiseless_data_prefers_smallest_penalty(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 3))
        y = X @ np.array([1.0, -2.0, 0.5])
        assert select_lambda(X, y, grid=DEFAULT_LAMBDA_GRID,
                             folds=5) == min(DEFAULT_LAMBDA_GRID)

    def test_too_few_rows_rejected(self):
        with pytest.raises(InsufficientRows):
            select_lambda(np.eye(3), np.ones(3), folds=5)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            select_lambda(np.eye(5), np.ones(5), grid=())


class TestAveragedFit:
    def _dataset(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 3))
        y = X @ np.array([2.0, 0.0, -1.0]) + 0.01 * rng.normal(size=40)
        return make_dataset(X, y)

    def test_single_full_run_equals_direct_fit(self):
        ds = self._dataset()
        result = averaged_fit(ds, "After_y", runs=1, subsample=1.0, seed=7)
        Xs, yc, _ = standardize(ds, "After_y")
        rng = np.random.default_rng(7)
        lam = select_lambda(Xs, yc, seed=int(rng.integers(2 ** 31)))
        expected = ridge_fit(Xs, yc, lam)
        np.testing.assert_allclose([result[c] for c in ds.input_columns],
                                   expected, atol=1e-12)

    def test_deterministic_given_seed(self):
        ds = self._dataset()
        a = averaged_fit(ds, "After_y", runs=4, subsample=0.8, seed=11)
        b = averaged_fit(ds, "After_y", runs=4, subsample=0.8, seed=11)
        assert a == b

    def test_zero_variance_column_gets_zero_coefficient(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([rng.normal(size=30), np.full(30, 5.0)])
        y = 2.0 * X[:, 0]
        ds = make_dataset(X, y)
        result = averaged_fit(ds, "After_y", runs=1, subsample=1.0)
        assert result["x1"] == 0.0

    def test_invalid_runs_rejected(self):
        with pytest.raises(ValueError):
            averaged_fit(self._dataset(), "After_y", runs=0)


COEFFS = {"After_up_mean_speed": {"a": 1.98, "b": -0.02, "c": 0.41}}


class TestFilterVariables:
    def test_threshold_keeps_large_magnitudes(self):
        result = filter_variables(COEFFS)
        assert result.selected["After_up_mean_speed"] == ("a",)
        assert result.fallback == ()

    def test_zero_threshold_keeps_all_nonzero(self):
        result = filter_variables(COEFFS, thresholds={"speed": 0.0,
                                                      "occupancy": 0.0,
                                                      "flow": 0.0})
        assert set(result.selected["After_up_mean_speed"]) == {"a", "b", "c"}

    def test_all_below_threshold_falls_back_with_warning(self):
        coeffs = {"After_up_mean_speed": {"a": 0.1, "b": -0.2}}
        with pytest.warns(UserWarning):
            result = filter_variables(coeffs)
        assert set(result.selected["After_up_mean_speed"]) == {"a", "b"}
        assert result.fallback == ("After_up_mean_speed",)

    def test_selection_invariant_to_dict_order(self):
        reordered = {"After_up_mean_speed": {"c": 0.41, "a": 1.98, "b": -0.02}}
        a = filter_variables(COEFFS)
        b = filter_variables(reordered)
        assert (set(a.selected["After_up_mean_speed"])
                == set(b.selected["After_up_mean_speed"]))

    def test_flow_targets_use_flow_threshold(self):
        coeffs = {"After_up_flow": {"a": 60.0, "b": 40.0}}
        result = filter_variables(coeffs)
        assert result.selected["After_up_flow"] == ("a",)
        assert result.thresholds["After_up_flow"] == 50.0

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            filter_variables(COEFFS, thresholds={"speed": -1.0,
                                                 "occupancy": 0.5,
                                                 "flow": 50.0})

    def test_csv_rendering_flags_selected(self):
        text = selection_to_csv(filter_variables(COEFFS))
        lines = text.splitlines()
        assert lines[0].startswith("variable,")
        row_a = next(line for line in lines if line.startswith("a,"))
        assert row_a.endswith(",1")


class TestRidgeRegressor:
    def test_recovers_linear_relation(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(60, 3))
        y = 3.0 + X @ np.array([1.5, -2.0, 0.0])
        model = RidgeRegressor(lam=1e-6).fit(X, y)
        np.testing.assert_allclose(model.predict(X), y, atol=1e-4)

    def test_estimator_params_round_trip(self):
        model = RidgeRegressor(lam=2.0, folds=3, seed=9)
        params = model.get_params()
        assert params["lam"] == 2.0 and params["folds"] == 3
        clone = RidgeRegressor(**params)
        assert clone.get_params() == params
