"""Direct (Hajek) estimation with a with-replacement design variance."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import (
    FLAG_DEGENERATE,
    FLAG_NO_DIRECT,
    AreaEstimateSet,
    AreaPartition,
    SurveyDataset,
)
from .errors import ValidationError


def _with_replacement_variance(contributions: np.ndarray, n_hat: float) -> float:
    """(1/N^2) * m/(m-1) * sum (c_j - mean c)^2 over residual contributions."""
    m = contributions.size
    dev = contributions - contributions.mean()
    return float((m / (m - 1)) * np.sum(dev * dev) / (n_hat * n_hat))


def hajek_estimate(data: SurveyDataset, partition: AreaPartition) -> AreaEstimateSet:
    """Weight-ratio direct estimates: sum(w*y) / sum(w) within each area.

    Areas without sampled units are flagged ``no_direct_estimate`` and get
    NaN estimates.
    """
    idx = partition.indexer(data.area_id)
    A = partition.n_areas
    w_total = np.bincount(idx, weights=data.weight, minlength=A)
    wy_total = np.bincount(idx, weights=data.weight * data.response, minlength=A)
    n_a = np.bincount(idx, minlength=A)

    estimate = np.full(A, np.nan)
    sampled = n_a > 0
    estimate[sampled] = wy_total[sampled] / w_total[sampled]

    flags = [set() if s else {FLAG_NO_DIRECT} for s in sampled]
    return AreaEstimateSet(
        area_ids=partition.area_ids,
        estimate=estimate,
        variance=np.full(A, np.nan),
        logit_estimate=np.full(A, np.nan),
        logit_variance=np.full(A, np.nan),
        effective_weight_total=w_total,
        sample_size=n_a,
        method="hajek",
        flags=flags,
    )


def hajek_variance(
    data: SurveyDataset,
    estimates: AreaEstimateSet,
    clustered: bool = False,
) -> AreaEstimateSet:
    """Populate design variances via with-replacement linearization.

    Unclustered: residual contributions are w_i*(y_i - p_hat) per unit.
    Clustered: contributions are cluster totals of the same quantity, with
    the number of sampled clusters replacing the unit count. Areas with a
    single unit (or a single cluster) are flagged ``degenerate_variance``
    rather than raising.
    """
    partition = AreaPartition.from_ids(estimates.area_ids)
    idx = partition.indexer(data.area_id)
    out = estimates.replace(variance=np.full(estimates.n_areas, np.nan))

    for a in range(estimates.n_areas):
        in_area = idx == a
        n_a = int(np.count_nonzero(in_area))
        if n_a == 0:
            continue
        p_hat = estimates.estimate[a]
        n_hat = estimates.effective_weight_total[a]
        d = data.weight[in_area] * (data.response[in_area] - p_hat)
        if clustered:
            clusters, inverse = np.unique(data.cluster_id[in_area], return_inverse=True)
            contributions = np.bincount(inverse, weights=d, minlength=clusters.size)
        else:
            contributions = d
        if contributions.size < 2:
            out.flags[a].add(FLAG_DEGENERATE)
            continue
        out.variance[a] = _with_replacement_variance(contributions, n_hat)
    return out


class HajekEstimator(BaseEstimator):
    """Direct weighted estimator of area proportions.

    Parameters
    ----------
    clustered : bool
        Use cluster-total residuals in the variance estimator.

    After ``fit``, ``estimates_`` holds an :class:`AreaEstimateSet` with
    point estimates, design variances, and logit-scale transfers.
    """

    def __init__(self, clustered: bool = False):
        self.clustered = clustered

    def fit(self, data: SurveyDataset, partition: AreaPartition | None = None):
        from .model_assisted import logit_with_delta

        if partition is None:
            partition = AreaPartition.from_ids(np.unique(data.area_id))
        est = hajek_estimate(data, partition)
        est = hajek_variance(data, est, clustered=self.clustered)
        self.estimates_ = logit_with_delta(est)
        return self

    def fit_transform(self, data: SurveyDataset, partition: AreaPartition | None = None):
        return self.fit(data, partition).estimates_


__all__ = ["HajekEstimator", "hajek_estimate", "hajek_variance"]
