"""Direct estimation: data model validation, Hajek point estimates, and the
with-replacement design variance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallarea import (
    AreaPartition,
    HajekEstimator,
    SurveyDataset,
    ValidationError,
    hajek_estimate,
    hajek_variance,
)
from smallarea.data import FLAG_DEGENERATE, FLAG_NO_DIRECT

from conftest import make_dataset


class TestDataModel:
    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            SurveyDataset(
                unit_id=np.array([]), area_id=np.array([]), cluster_id=np.array([]),
                stratum_id=np.array([]), weight=np.array([]), response=np.array([]),
                covariates=np.zeros((0, 0)),
            )

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValidationError, match="positive"):
            make_dataset([1, 0], w=[1.0, 0.0])

    def test_nonbinary_response_rejected(self):
        with pytest.raises(ValidationError, match="binary"):
            make_dataset([1, 2])

    def test_duplicate_unit_ids_rejected(self):
        with pytest.raises(ValidationError, match="unique"):
            SurveyDataset(
                unit_id=[1, 1], area_id=[0, 0], cluster_id=[0, 1], stratum_id=[0, 0],
                weight=[1.0, 1.0], response=[0, 1], covariates=np.zeros((2, 0)),
            )

    def test_partition_requires_unique_areas(self):
        with pytest.raises(ValidationError):
            AreaPartition.from_ids([1, 1, 2])

    def test_unknown_area_rejected(self, one_area_partition):
        data = make_dataset([1, 0], area=[0, 7])
        with pytest.raises(ValidationError, match="unknown area"):
            hajek_estimate(data, one_area_partition)


class TestHajekEstimate:
    def test_equal_weights_reduce_to_sample_mean(self, one_area_partition):
        est = hajek_estimate(make_dataset([1, 0, 1, 1]), one_area_partition)
        assert est.estimate[0] == pytest.approx(0.75)

    def test_weighted_example(self, one_area_partition):
        est = hajek_estimate(make_dataset([1, 0], w=[3.0, 1.0]), one_area_partition)
        assert est.estimate[0] == pytest.approx(0.75)

    def test_constant_response_gives_one(self, one_area_partition):
        est = hajek_estimate(make_dataset([1, 1, 1], w=[0.2, 5.0, 1.7]), one_area_partition)
        assert est.estimate[0] == 1.0

    def test_unsampled_area_flagged(self):
        partition = AreaPartition.from_ids([0, 1])
        est = hajek_estimate(make_dataset([1, 0], area=[0, 0]), partition)
        assert np.isnan(est.estimate[1])
        assert FLAG_NO_DIRECT in est.flags[1]
        assert est.sample_size[1] == 0

    def test_effective_weight_total(self, one_area_partition):
        est = hajek_estimate(make_dataset([1, 0], w=[3.0, 1.0]), one_area_partition)
        assert est.effective_weight_total[0] == pytest.approx(4.0)

    @settings(max_examples=60, deadline=None)
    @given(
        y=st.lists(st.integers(0, 1), min_size=2, max_size=12),
        scale=st.floats(1e-6, 1e6),
        seed=st.integers(0, 2**16),
    )
    def test_weight_scale_invariance(self, y, scale, seed):
        rng = np.random.default_rng(seed)
        w = rng.uniform(0.5, 3.0, size=len(y))
        partition = AreaPartition.from_ids([0])
        base = hajek_estimate(make_dataset(y, w=w), partition).estimate[0]
        scaled = hajek_estimate(make_dataset(y, w=scale * w), partition).estimate[0]
        assert scaled == pytest.approx(base, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_estimate_within_response_range(self, seed):
        rng = np.random.default_rng(seed)
        n = rng.integers(2, 20)
        y = rng.integers(0, 2, size=n)
        w = rng.uniform(0.1, 10.0, size=n)
        est = hajek_estimate(make_dataset(y, w=w), AreaPartition.from_ids([0]))
        assert y.min() <= est.estimate[0] <= y.max()

    def test_census_identity(self):
        rng = np.random.default_rng(5)
        area = rng.integers(0, 3, size=60)
        y = rng.integers(0, 2, size=60)
        partition = AreaPartition.from_ids([0, 1, 2])
        est = hajek_estimate(make_dataset(y, area=area), partition)
        for a in range(3):
            assert est.estimate[a] == pytest.approx(y[area == a].mean(), abs=1e-15)


class TestHajekVariance:
    def test_hand_computed_value(self, one_area_partition):
        data = make_dataset([1, 0], w=[1.0, 1.0])
        est = hajek_variance(data, hajek_estimate(data, one_area_partition))
        # residual terms w*(y - 0.5) = (0.5, -0.5); V = (1/4)*2*(0.25+0.25)
        assert est.variance[0] == pytest.approx(0.25, abs=1e-15)

    def test_constant_response_zero_variance(self, one_area_partition):
        data = make_dataset([1, 1, 1, 1], w=[1.0, 2.0, 3.0, 4.0])
        est = hajek_variance(data, hajek_estimate(data, one_area_partition))
        assert est.variance[0] == pytest.approx(0.0, abs=1e-15)

    def test_single_unit_area_flagged_not_raised(self):
        partition = AreaPartition.from_ids([0, 1])
        data = make_dataset([1, 0, 1], area=[0, 0, 1])
        est = hajek_variance(data, hajek_estimate(data, partition))
        assert FLAG_DEGENERATE in est.flags[1]
        assert np.isnan(est.variance[1])
        assert np.isfinite(est.variance[0])

    def test_single_cluster_area_flagged_when_clustered(self, one_area_partition):
        data = make_dataset([1, 0, 1], cluster=[7, 7, 7])
        est = hajek_variance(data, hajek_estimate(data, one_area_partition), clustered=True)
        assert FLAG_DEGENERATE in est.flags[0]

    def test_singleton_clusters_match_unclustered(self, one_area_partition):
        rng = np.random.default_rng(11)
        y = rng.integers(0, 2, size=10)
        w = rng.uniform(0.5, 2.0, size=10)
        data = make_dataset(y, w=w)
        unclustered = hajek_variance(data, hajek_estimate(data, one_area_partition))
        clustered = hajek_variance(
            data, hajek_estimate(data, one_area_partition), clustered=True
        )
        assert clustered.variance[0] == pytest.approx(unclustered.variance[0], abs=1e-15)

    def test_clustered_uses_cluster_totals(self, one_area_partition):
        data = make_dataset([1, 1, 0, 0], w=[1.0, 1.0, 1.0, 1.0], cluster=[0, 0, 1, 1])
        est = hajek_variance(data, hajek_estimate(data, one_area_partition), clustered=True)
        # cluster residual totals are (1, -1); V = (1/16)*2*(1+1) = 0.25
        assert est.variance[0] == pytest.approx(0.25, abs=1e-15)


class TestHajekEstimatorAPI:
    def test_fit_populates_estimates(self):
        rng = np.random.default_rng(3)
        data = make_dataset(rng.integers(0, 2, size=30), area=rng.integers(0, 3, size=30))
        model = HajekEstimator().fit(data)
        est = model.estimates_
        assert est.n_areas == 3
        assert np.all(np.isfinite(est.logit_estimate))
        assert model.get_params() == {"clustered": False}

    def test_fit_transform_matches_fit(self):
        data = make_dataset([1, 0, 1, 1])
        out = HajekEstimator(clustered=True).fit_transform(data)
        assert out.estimate[0] == pytest.approx(0.75)
