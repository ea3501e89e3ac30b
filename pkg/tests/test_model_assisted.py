"""Model-assisted estimation: the difference-estimator identities, the
with-replacement residual variance, and the delta-method transfer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit

from smallarea import (
    AreaPartition,
    ModelAssistedEstimator,
    ResidualSet,
    SurveyWeightedLogisticRegression,
    hajek_estimate,
    logit_with_delta,
    ma_estimate,
    ma_variance,
    working_residuals,
)
from smallarea.data import FLAG_CLAMPED, FLAG_DEGENERATE, FLAG_NO_CORRECTION

from conftest import ConstantClassifier, make_dataset, make_frame, random_logistic_data


def random_fit(rng, p):
    """An arbitrary (unfitted-to-anything) working model."""
    model = SurveyWeightedLogisticRegression()
    model.intercept_ = rng.normal()
    model.coef_ = rng.normal(size=p)
    model.n_features_in_ = p
    return model


class TestMAEstimate:
    def test_hand_computed_example(self, one_area_partition):
        frame = make_frame([0, 0, 0, 0], [1.0, 1.0, 1.0, 1.0])
        data = make_dataset([1, 0], w=[2.0, 2.0])
        est = ma_estimate(data, frame, ConstantClassifier(0.5), one_area_partition)
        # (4*0.5 + 2*0.5 + 2*(-0.5)) / 4
        assert est.estimate[0] == pytest.approx(0.5, abs=1e-15)

    def test_constant_predictions_reduce_to_hajek(self):
        rng = np.random.default_rng(0)
        partition = AreaPartition.from_ids([0, 1])
        area = rng.integers(0, 2, size=30)
        y = rng.integers(0, 2, size=30)
        w = rng.uniform(0.5, 3.0, size=30)
        data = make_dataset(y, w=w, area=area)
        # frame totals equal the effective weight totals
        n_hat = [w[area == a].sum() for a in (0, 1)]
        frame = make_frame([0, 1], n_hat)
        ma = ma_estimate(data, frame, ConstantClassifier(0.37), partition)
        hajek = hajek_estimate(data, partition)
        np.testing.assert_allclose(ma.estimate, hajek.estimate, atol=1e-12)

    def test_census_exactness_for_arbitrary_fit(self):
        rng = np.random.default_rng(1)
        X, y, _ = random_logistic_data(rng, n=60, p=2)
        area = rng.integers(0, 3, size=60)
        partition = AreaPartition.from_ids([0, 1, 2])
        data = make_dataset(y, area=area, covariates=X)
        frame = make_frame(area, np.ones(60), covariates=X)
        for _ in range(3):
            est = ma_estimate(data, frame, random_fit(rng, 2), partition)
            for a in range(3):
                assert est.estimate[a] == pytest.approx(y[area == a].mean(), abs=1e-12)

    def test_unsampled_area_gets_synthetic_estimate(self):
        partition = AreaPartition.from_ids([0, 1])
        data = make_dataset([1, 0], area=[0, 0])
        frame = make_frame([0, 1], [2.0, 5.0])
        est = ma_estimate(data, frame, ConstantClassifier(0.3), partition)
        assert est.estimate[1] == pytest.approx(0.3)
        assert FLAG_NO_CORRECTION in est.flags[1]
        assert not est.observed_mask()[1]

    def test_boundary_clamp_applied_and_flagged(self, one_area_partition):
        frame = make_frame([0], [2.0])
        data = make_dataset([0, 0])
        est = ma_estimate(data, frame, ConstantClassifier(1e-9), one_area_partition)
        eps = min(0.005, 1.0 / (2.0 * 2.0))
        assert est.estimate[0] == pytest.approx(eps)
        assert FLAG_CLAMPED in est.flags[0]

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
    def test_weight_scale_invariance(self, scale, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, size=12)
        w = rng.uniform(0.5, 3.0, size=12)
        partition = AreaPartition.from_ids([0])
        frame = make_frame([0] * 3, rng.uniform(1, 5, size=3))
        model = ConstantClassifier(0.4)
        base = ma_estimate(make_dataset(y, w=w), frame, model, partition)
        scaled = ma_estimate(make_dataset(y, w=scale * w), frame, model, partition)
        # the correction sum and the weight total scale together, so the
        # weighted-residual part of the estimate is scale-free
        corr_base = base.estimate[0] - 0.4 * frame.count.sum() / base.effective_weight_total[0]
        corr_scaled = scaled.estimate[0] - 0.4 * frame.count.sum() / scaled.effective_weight_total[0]
        assert corr_scaled == pytest.approx(corr_base, abs=1e-12)


class TestMAVariance:
    def test_zero_residuals_zero_variance(self, one_area_partition):
        data = make_dataset([1, 0, 1])
        est = hajek_estimate(data, one_area_partition)
        residuals = ResidualSet(
            residual=np.zeros(3), weight=data.weight,
            area_id=data.area_id, cluster_id=data.cluster_id,
        )
        out = ma_variance(residuals, est)
        assert out.variance[0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_computed_value(self, one_area_partition):
        data = make_dataset([1, 0])
        est = hajek_estimate(data, one_area_partition)  # Nhat = 2
        residuals = ResidualSet(
            residual=np.array([1.0, -1.0]), weight=np.array([1.0, 1.0]),
            area_id=np.array([0, 0]), cluster_id=np.array([0, 1]),
        )
        out = ma_variance(residuals, est)
        # e-bar = 0; V = (1/4)*2*(1+1) = 1
        assert out.variance[0] == pytest.approx(1.0, abs=1e-15)

    def test_singleton_clusters_equal_unclustered(self, one_area_partition):
        rng = np.random.default_rng(3)
        data = make_dataset(rng.integers(0, 2, size=8), w=rng.uniform(0.5, 2, size=8))
        est = hajek_estimate(data, one_area_partition)
        residuals = ResidualSet(
            residual=rng.uniform(-1, 1, size=8), weight=data.weight,
            area_id=data.area_id, cluster_id=np.arange(8),
        )
        a = ma_variance(residuals, est, clustered=False).variance[0]
        b = ma_variance(residuals, est, clustered=True).variance[0]
        assert a == pytest.approx(b, abs=1e-15)

    def test_single_unit_area_flagged(self):
        partition = AreaPartition.from_ids([0, 1])
        data = make_dataset([1, 0, 1], area=[0, 0, 1])
        est = hajek_estimate(data, partition)
        residuals = ResidualSet(
            residual=np.array([0.2, -0.1, 0.3]), weight=data.weight,
            area_id=data.area_id, cluster_id=data.cluster_id,
        )
        out = ma_variance(residuals, est)
        assert FLAG_DEGENERATE in out.flags[1]


class TestLogitDelta:
    def _estimates(self, p, v, n_hat=100.0):
        data = make_dataset([1, 0])
        est = hajek_estimate(data, AreaPartition.from_ids([0]))
        est.estimate[0] = p
        est.variance[0] = v
        est.effective_weight_total[0] = n_hat
        return est

    def test_delta_method_value(self):
        out = logit_with_delta(self._estimates(0.5, 0.01))
        assert out.logit_variance[0] == pytest.approx(0.16, abs=1e-15)

    def test_logit_symmetry_at_half(self):
        out = logit_with_delta(self._estimates(0.5, 0.01))
        assert out.logit_estimate[0] == pytest.approx(0.0, abs=1e-15)

    def test_boundary_clamped_and_flagged(self):
        out = logit_with_delta(self._estimates(1.0, 0.001, n_hat=50.0))
        eps = min(0.005, 1.0 / 100.0)
        assert out.logit_estimate[0] == pytest.approx(logit(1.0 - eps))
        assert np.isfinite(out.logit_variance[0])
        assert FLAG_CLAMPED in out.flags[0]

    def test_degenerate_flag_propagates(self):
        partition = AreaPartition.from_ids([0, 1])
        data = make_dataset([1, 0, 1], area=[0, 0, 1])
        est = hajek_variance(data, hajek_estimate(data, partition))
        out = logit_with_delta(est)
        assert FLAG_DEGENERATE in out.flags[1]
        assert not out.observed_mask()[1]


class TestModelAssistedEstimatorAPI:
    def test_full_pipeline_and_working_model_exposed(self):
        rng = np.random.default_rng(12)
        X, y, w = random_logistic_data(rng, n=60, p=2)
        area = rng.integers(0, 3, size=60)
        data = make_dataset(y, w=w, area=area, cluster=np.arange(60) // 3, covariates=X)
        frame = make_frame(area, np.full(60, 2.0), covariates=X)
        model = ModelAssistedEstimator(clustered=True).fit(data, frame)
        assert model.estimates_.n_areas == 3
        assert np.all(np.isfinite(model.estimates_.logit_variance))
        assert model.working_model_.converged_

    def test_pluggable_working_model(self):
        rng = np.random.default_rng(13)
        X, y, w = random_logistic_data(rng, n=40, p=2)
        data = make_dataset(y, w=w, covariates=X)
        frame = make_frame([0] * 5, np.full(5, 8.0), covariates=X[:5])
        est = ModelAssistedEstimator(working_model=SurveyWeightedLogisticRegression(max_iter=60))
        est.fit(data, frame, AreaPartition.from_ids([0]))
        assert est.get_params()["clustered"] is False

    def test_residuals_bounded(self):
        rng = np.random.default_rng(14)
        X, y, w = random_logistic_data(rng, n=40, p=2)
        data = make_dataset(y, w=w, covariates=X)
        model = SurveyWeightedLogisticRegression().fit(X, y, sample_weight=w)
        res = working_residuals(data, model)
        assert np.all(np.abs(res.residual) <= 1.0)
