import numpy as np
import pytest

from smallarea import AreaPartition, PopulationFrame, SurveyDataset


def make_dataset(y, w=None, area=None, cluster=None, stratum=None, covariates=None):
    """Small survey dataset builder with sensible defaults."""
    y = np.asarray(y)
    n = y.size
    return SurveyDataset(
        unit_id=np.arange(n),
        area_id=np.zeros(n, dtype=int) if area is None else np.asarray(area),
        cluster_id=np.arange(n) if cluster is None else np.asarray(cluster),
        stratum_id=np.zeros(n, dtype=int) if stratum is None else np.asarray(stratum),
        weight=np.ones(n) if w is None else np.asarray(w, dtype=float),
        response=y,
        covariates=np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float),
    )


def make_frame(area, count, covariates=None):
    area = np.asarray(area)
    m = area.size
    return PopulationFrame(
        cell_id=np.arange(m),
        area_id=area,
        count=np.asarray(count, dtype=float),
        covariates=np.zeros((m, 0)) if covariates is None else np.asarray(covariates, dtype=float),
    )


class ConstantClassifier:
    """Minimal predict_proba model emitting a fixed success probability."""

    classes_ = np.array([0, 1])

    def __init__(self, p, n_features=0):
        self.p = p
        self.n_features_in_ = n_features

    def predict_proba(self, X):
        n = np.asarray(X).shape[0]
        return np.column_stack([np.full(n, 1.0 - self.p), np.full(n, self.p)])


@pytest.fixture
def one_area_partition():
    return AreaPartition.from_ids([0])


def random_logistic_data(rng, n=50, p=3, weight_scale=True):
    """Seeded dataset for working-model oracle comparisons."""
    X = rng.normal(size=(n, p))
    gamma = rng.normal(scale=0.8, size=p + 1)
    eta = gamma[0] + X @ gamma[1:]
    y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(int)
    w = rng.uniform(0.5, 4.0, size=n) if weight_scale else np.ones(n)
    return X, y, w
