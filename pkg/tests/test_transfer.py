"""Substitute construction, weight annealing and the two-stage fit."""

import numpy as np
import pytest

from ramp_transfer.transfer import (
    EmptySubstitute,
    GoalUnreachable,
    RosterMismatch,
    TransferConfig,
    TransferModel,
    TwoStageTrAdaBoostR2,
    beta_search,
    build_substitute,
    transfer_predict,
    two_stage_fit,
)


class TestBuildSubstitute:
    def test_theta_one_le_includes_every_row(self):
        rng = np.random.default_rng(0)
        X_source = rng.normal(size=(20, 3))
        X_target = rng.normal(size=(5, 3))
        indices = build_substitute(X_source, X_target, theta=1.0,
                                   comparator="le")
        np.testing.assert_array_equal(indices, np.arange(20))

    def test_identical_row_has_similarity_one(self):
        rng = np.random.default_rng(1)
        X_source = rng.normal(size=(10, 3))
        X_target = X_source[[4]]
        indices = build_substitute(X_source, X_target, theta=1.0 - 1e-9,
                                   comparator="ge")
        assert 4 in indices

    def test_single_source_row_treated_as_zero_similarity(self):
        X_source = np.array([[1.0, 2.0, 3.0]])
        X_target = np.array([[1.0, 2.0, 3.0]])
        indices = build_substitute(X_source, X_target, theta=0.0,
                                   comparator="le")
        np.testing.assert_array_equal(indices, [0])
        with pytest.raises(EmptySubstitute):
            build_substitute(X_source, X_target, theta=0.5, comparator="ge")

    def test_empty_substitute_raises(self):
        X_source = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        X_target = np.copy(X_source)
        with pytest.raises(EmptySubstitute):
            build_substitute(X_source, X_target, theta=-1.0, comparator="le")

    def test_roster_mismatch_rejected(self):
        with pytest.raises(RosterMismatch):
            build_substitute(np.zeros((3, 2)), np.zeros((2, 3)), theta=0.5)


class TestBetaSearch:
    def test_goal_equal_current_gives_one(self):
        w = np.array([0.25, 0.25, 0.25, 0.25])
        mask = np.array([True, True, False, False])
        beta = beta_search(w, mask, goal=0.5, errors=np.array([0.5, 0.5]))
        assert beta == 1.0

    def test_goal_one_gives_zero(self):
        w = np.array([0.5, 0.5])
        mask = np.array([True, False])
        assert beta_search(w, mask, goal=1.0, errors=np.array([1.0])) == 0.0

    def test_closed_form_single_pair(self):
        w = np.array([0.5, 0.5])
        mask = np.array([True, False])
        beta = beta_search(w, mask, goal=0.75, errors=np.array([1.0]))
        assert beta == pytest.approx(1.0 / 3.0, abs=1e-7)

    def test_goal_below_current_rejected(self):
        w = np.array([0.5, 0.5])
        mask = np.array([True, False])
        with pytest.raises(GoalUnreachable):
            beta_search(w, mask, goal=0.25, errors=np.array([1.0]))

    def test_zero_error_source_cap_triggers_extinction(self):
        # A zero-error source row keeps its weight for every beta > 0, so a
        # goal above the resulting cap must extinguish the source mass.
        w = np.array([0.1, 0.45, 0.45])
        mask = np.array([True, False, False])
        with pytest.warns(UserWarning):
            beta = beta_search(w, mask, goal=0.9,
                               errors=np.array([0.0, 1.0]))
        assert beta == 0.0


class TestTransferConfig:
    @pytest.mark.parametrize("kwargs", [
        {"steps": 1}, {"folds": 1}, {"theta": 1.5},
        {"substitute_comparator": "gt"}])
    def test_invalid_settings_rejected(self, kwargs):
        with pytest.raises(ValueError):
            TransferConfig(**kwargs)


def _problem(seed=0, n=40, m=10):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n + m, 3))
    y = X @ np.array([1.0, -1.0, 0.5]) + 0.1 * rng.normal(size=n + m)
    mask = np.zeros(n + m, dtype=bool)
    mask[:m] = True
    return X, y, mask


class TestTwoStageFit:
    def test_two_steps_extinguish_source_mass(self):
        X, y, mask = _problem()
        config = TransferConfig(steps=2, folds=2, n_estimators=3, max_depth=2)
        model = two_stage_fit(X, y, mask, config)
        assert model.step_substitute_mass == pytest.approx([1.0], abs=1e-12)
        assert len(model.step_errors) == 2
        assert model.selected_step in (1, 2)

    def test_empty_substitute_rejected(self):
        X, y, mask = _problem()
        with pytest.raises(EmptySubstitute):
            two_stage_fit(X, y, np.zeros(len(y), dtype=bool),
                          TransferConfig(steps=2, folds=2))

    def test_no_pure_source_rejected(self):
        X, y, mask = _problem()
        with pytest.raises(ValueError):
            two_stage_fit(X, y, np.ones(len(y), dtype=bool),
                          TransferConfig(steps=2, folds=2))

    def test_folds_exceeding_substitute_rejected(self):
        X, y, mask = _problem(m=3)
        with pytest.raises(ValueError):
            two_stage_fit(X, y, mask, TransferConfig(steps=2, folds=5))

    def test_deterministic_given_seed(self):
        X, y, mask = _problem()
        config = TransferConfig(steps=3, folds=2, n_estimators=3,
                                max_depth=2, seed=5)
        a = two_stage_fit(X, y, mask, config)
        b = two_stage_fit(X, y, mask, config)
        assert a.step_errors == b.step_errors
        assert a.selected_step == b.selected_step

    def test_noiseless_identical_distribution_cv_error_small(self):
        rng = np.random.default_rng(7)
        # Keep inputs away from the class boundaries so held-out rows cannot
        # land inside the gap a learned threshold may sit in.
        X = rng.uniform(0.2, 1.0, size=(120, 2)) * rng.choice(
            [-1.0, 1.0], size=(120, 2))
        y = np.where(X[:, 0] > 0, 2.0, -2.0) + np.where(X[:, 1] > 0, 1.0, 0.0)
        mask = np.zeros(120, dtype=bool)
        mask[:30] = True
        config = TransferConfig(steps=2, folds=3, n_estimators=10,
                                max_depth=3)
        model = two_stage_fit(X, y, mask, config)
        assert min(model.step_errors) < 0.05 * float(np.std(y))


class TestTransferPredict:
    def _model(self):
        X, y, mask = _problem()
        return two_stage_fit(X, y, mask, TransferConfig(
            steps=2, folds=2, n_estimators=3, max_depth=2)), X

    def test_empty_input_gives_empty_output(self):
        model, X = self._model()
        assert transfer_predict(model, np.empty((0, 3))).shape == (0,)

    def test_batch_matches_single_row_calls(self):
        model, X = self._model()
        batch = transfer_predict(model, X[:5])
        singles = [transfer_predict(model, X[i:i + 1])[0] for i in range(5)]
        np.testing.assert_array_equal(batch, singles)

    def test_roster_mismatch_rejected(self):
        model, _ = self._model()
        model.column_roster = ("a", "b", "c")
        with pytest.raises(RosterMismatch):
            transfer_predict(model, np.zeros((2, 5)))

    def test_model_json_round_trip(self):
        model, X = self._model()
        again = TransferModel.from_json(model.to_json())
        assert again.selected_step == model.selected_step
        assert again.step_errors == model.step_errors
        assert again.step_substitute_mass == model.step_substitute_mass
        np.testing.assert_array_equal(transfer_predict(again, X),
                                      transfer_predict(model, X))


class TestEstimatorApi:
    def test_fit_requires_target_inputs(self):
        X, y, _ = _problem()
        with pytest.raises(ValueError):
            TwoStageTrAdaBoostR2().fit(X, y)

    def test_fit_predict_round_trip(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(60, 3))
        y = X @ np.array([1.0, 0.5, -0.5])
        target_inputs = X[:10] + 0.01 * rng.normal(size=(10, 3))
        model = TwoStageTrAdaBoostR2(steps=2, folds=2, theta=0.5,
                                     n_estimators=5, max_depth=3,
                                     substitute_comparator="ge")
        model.fit(X, y, target_inputs=target_inputs)
        preds = model.predict(target_inputs)
        assert preds.shape == (10,)
        assert np.isfinite(preds).all()

    def test_get_params_round_trip(self):
        model = TwoStageTrAdaBoostR2(steps=4, theta=0.7)
        params = model.get_params()
        assert params["steps"] == 4 and params["theta"] == 0.7
        clone = TwoStageTrAdaBoostR2(**params)
        assert clone.get_params() == params
