"""Survey-weighted logistic regression: score equations, the derivative-free
oracle, safeguards, and frame prediction."""

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, logit

from smallarea import (
    PopulationFrame,
    SeparationError,
    SurveyWeightedLogisticRegression,
    ValidationError,
    fit_working_model,
    predict_frame,
)

from conftest import make_dataset, random_logistic_data


def weighted_negative_loglik(theta, X, y, w):
    eta = theta[0] + X @ theta[1:]
    return -np.sum(w * (y * eta - np.logaddexp(0.0, eta)))


def nelder_mead_oracle(X, y, w):
    """Derivative-free maximizer of the same weighted log-likelihood."""
    x0 = np.zeros(X.shape[1] + 1)
    opts = dict(xatol=1e-11, fatol=1e-13, maxiter=40000, maxfev=60000)
    res = minimize(weighted_negative_loglik, x0, args=(X, y, w),
                   method="Nelder-Mead", options=opts)
    res = minimize(weighted_negative_loglik, res.x, args=(X, y, w),
                   method="Nelder-Mead", options=opts)
    return res.x


class TestScoreEquations:
    def test_intercept_only_equal_weights(self):
        y = np.array([1, 0, 0, 0] * 5)
        model = SurveyWeightedLogisticRegression().fit(np.zeros((20, 0)), y)
        assert model.intercept_ == pytest.approx(logit(0.25), abs=1e-9)
        assert model.converged_

    def test_intercept_only_weighted_matches_hajek_mean(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, size=40)
        w = rng.uniform(0.5, 5.0, size=40)
        model = SurveyWeightedLogisticRegression().fit(np.zeros((40, 0)), y, sample_weight=w)
        assert model.intercept_ == pytest.approx(logit(np.sum(w * y) / np.sum(w)), abs=1e-9)

    def test_global_weighted_score_identity(self):
        rng = np.random.default_rng(1)
        X, y, w = random_logistic_data(rng, n=80, p=2)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        fitted = model.predict_proba(X)[:, 1]
        assert abs(np.sum(w * (y - fitted))) <= 1e-6 * np.sum(w)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_derivative_free_oracle(self, seed):
        rng = np.random.default_rng(seed)
        X, y, w = random_logistic_data(rng, n=50, p=3)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        oracle = nelder_mead_oracle(X, y, w)
        np.testing.assert_allclose(model.coefficients_, oracle, atol=1e-6)
        assert model.score_norm_ <= 1e-8

    def test_weight_rescaling_leaves_fit_unchanged(self):
        rng = np.random.default_rng(7)
        X, y, w = random_logistic_data(rng, n=60, p=3)
        base = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        scaled = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=1000.0 * w)
        np.testing.assert_allclose(base.coefficients_, scaled.coefficients_, atol=1e-8)

    def test_converged_implies_score_below_tolerance(self):
        rng = np.random.default_rng(9)
        X, y, w = random_logistic_data(rng, n=70, p=3)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        assert model.converged_
        assert model.score_norm_ <= model.score_tol


class TestSafeguards:
    def test_rank_deficiency_names_columns(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 2))
        X = np.column_stack([X, X[:, 0]])
        y = rng.integers(0, 2, size=30)
        with pytest.raises(ValidationError, match="z[13]"):
            SurveyWeightedLogisticRegression().fit(X, y)

    def test_complete_separation_raises_with_advice(self):
        X = np.linspace(-2, 2, 40).reshape(-1, 1)
        y = (X[:, 0] > 0).astype(int)
        with pytest.raises(SeparationError, match="separat"):
            SurveyWeightedLogisticRegression().fit(X, y)

    def test_too_few_units_rejected(self):
        with pytest.raises(ValidationError, match="at least"):
            SurveyWeightedLogisticRegression().fit(np.zeros((3, 2)), np.array([0, 1, 0]))

    def test_deviance_nonincreasing_over_refits(self):
        # the returned deviance never exceeds the null-model deviance
        rng = np.random.default_rng(21)
        X, y, w = random_logistic_data(rng, n=60, p=3)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        null = SurveyWeightedLogisticRegression().fit(np.zeros((60, 0)), y, sample_weight=w)
        assert model.deviance_ <= null.deviance_ + 1e-10


class TestPrediction:
    def test_zero_coefficients_predict_half(self):
        model = SurveyWeightedLogisticRegression()
        model.intercept_ = 0.0
        model.coef_ = np.zeros(2)
        model.n_features_in_ = 2
        frame = PopulationFrame(
            cell_id=[0, 1], area_id=[0, 0], count=[1.0, 2.0],
            covariates=[[1.0, -1.0], [0.5, 2.0]],
        )
        np.testing.assert_allclose(predict_frame(model, frame), [0.5, 0.5])

    def test_frame_cell_matches_sampled_unit(self):
        rng = np.random.default_rng(4)
        X, y, w = random_logistic_data(rng, n=50, p=2)
        data = make_dataset(y, w=w, covariates=X)
        model = fit_working_model(data)
        frame = PopulationFrame(
            cell_id=[0], area_id=[0], count=[4.0], covariates=X[:1],
        )
        cell_pred = predict_frame(model, frame)[0]
        unit_pred = model.predict_proba(X[:1])[0, 1]
        assert cell_pred == unit_pred

    def test_monotone_in_positive_coefficient(self):
        rng = np.random.default_rng(6)
        X, y, w = random_logistic_data(rng, n=60, p=1)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        lo, hi = model.predict_proba(np.array([[0.0], [1.0]]))[:, 1]
        if model.coef_[0] > 0:
            assert hi > lo
        else:
            assert hi < lo

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        X, y, w = random_logistic_data(rng, n=40, p=2)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        with pytest.raises(ValidationError, match="covariates"):
            model.predict_proba(np.zeros((5, 3)))

    def test_predictions_strictly_inside_unit_interval(self):
        model = SurveyWeightedLogisticRegression()
        model.intercept_ = 0.0
        model.coef_ = np.array([100.0])
        model.n_features_in_ = 1
        proba = model.predict_proba(np.array([[-10.0], [10.0]]))[:, 1]
        assert 0.0 < proba[0] < proba[1] < 1.0
        assert proba[1] == expit(30.0)


class TestEstimatorContract:
    def test_get_params_round_trip(self):
        model = SurveyWeightedLogisticRegression(max_iter=17)
        params = model.get_params()
        assert params["max_iter"] == 17
        clone = SurveyWeightedLogisticRegression(**params)
        assert clone.get_params() == params

    def test_predict_labels(self):
        rng = np.random.default_rng(10)
        X, y, w = random_logistic_data(rng, n=50, p=2)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        labels = model.predict(X)
        assert set(np.unique(labels)) <= {0, 1}
