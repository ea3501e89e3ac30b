"""Model-assisted (logistic GREG) estimation and the logit-scale transfer.

The estimator combines frame-wide working predictions with a weighted
correction from sampled residuals, divided by the sum of sampled weights,
so it stays design-consistent regardless of working-model quality.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logit
from sklearn.base import BaseEstimator, clone

from .data import (
    FLAG_CLAMPED,
    FLAG_DEGENERATE,
    FLAG_NO_CORRECTION,
    AreaEstimateSet,
    AreaPartition,
    PopulationFrame,
    ResidualSet,
    SurveyDataset,
)
from .direct import _with_replacement_variance
from .errors import ValidationError
from .working import (
    SurveyWeightedLogisticRegression,
    predict_frame,
    predicted_success_probability,
)


def boundary_epsilon(effective_weight_total: np.ndarray) -> np.ndarray:
    """Clamp width min(0.005, 1/(2*Nhat)); shrinks with effective sample size."""
    with np.errstate(divide="ignore"):
        return np.minimum(0.005, 0.5 / np.asarray(effective_weight_total, dtype=float))


def working_residuals(data: SurveyDataset, model) -> ResidualSet:
    """Residuals e_i = yhat_i - y_i for the sampled units."""
    yhat = predicted_success_probability(model, data.covariates)
    return ResidualSet(
        residual=yhat - data.response,
        weight=data.weight,
        area_id=data.area_id,
        cluster_id=data.cluster_id,
    )


def ma_estimate(
    data: SurveyDataset,
    frame: PopulationFrame,
    model,
    partition: AreaPartition,
) -> AreaEstimateSet:
    """Model-assisted area estimates.

    p_a = (sum over frame cells of count*yhat + sum over sample of
    w*(y - yhat)) / Nhat_a with Nhat_a the sum of sampled weights.
    Results are clamped away from {0,1} before any logit transfer; areas
    covered by the frame but without sampled units get the synthetic
    (prediction-only) estimate and are flagged ``no_direct_correction``.
    """
    if frame.p != data.p:
        raise ValidationError(f"frame has {frame.p} covariates, sample has {data.p}")
    A = partition.n_areas
    cell_idx = partition.indexer(frame.area_id)
    unit_idx = partition.indexer(data.area_id)

    yhat_cells = predict_frame(model, frame)
    pred_total = np.bincount(cell_idx, weights=frame.count * yhat_cells, minlength=A)
    frame_count = np.bincount(cell_idx, weights=frame.count, minlength=A)

    yhat_units = predicted_success_probability(model, data.covariates)
    correction = np.bincount(
        unit_idx, weights=data.weight * (data.response - yhat_units), minlength=A
    )
    n_hat = np.bincount(unit_idx, weights=data.weight, minlength=A)
    n_a = np.bincount(unit_idx, minlength=A)

    estimate = np.full(A, np.nan)
    flags = [set() for _ in range(A)]
    sampled = n_a > 0
    estimate[sampled] = (pred_total[sampled] + correction[sampled]) / n_hat[sampled]
    synthetic_only = (~sampled) & (frame_count > 0)
    estimate[synthetic_only] = pred_total[synthetic_only] / frame_count[synthetic_only]
    for a in np.flatnonzero(synthetic_only):
        flags[a].add(FLAG_NO_CORRECTION)

    eps = boundary_epsilon(n_hat)
    have = np.isfinite(estimate)
    clamped = have & ((estimate < eps) | (estimate > 1.0 - eps))
    estimate[have] = np.clip(estimate[have], eps[have], 1.0 - eps[have])
    for a in np.flatnonzero(clamped):
        flags[a].add(FLAG_CLAMPED)

    return AreaEstimateSet(
        area_ids=partition.area_ids,
        estimate=estimate,
        variance=np.full(A, np.nan),
        logit_estimate=np.full(A, np.nan),
        logit_variance=np.full(A, np.nan),
        effective_weight_total=n_hat,
        sample_size=n_a,
        method="ma",
        flags=flags,
    )


def ma_variance(
    residuals: ResidualSet,
    estimates: AreaEstimateSet,
    clustered: bool = False,
) -> AreaEstimateSet:
    """With-replacement residual variance for the model-assisted estimator.

    Unclustered form uses unit contributions w_i*e_i; the clustered form
    replaces them with per-cluster totals and the sampled-cluster count.
    Single-unit (or single-cluster) areas are flagged degenerate.
    """
    partition = AreaPartition.from_ids(estimates.area_ids)
    idx = partition.indexer(residuals.area_id)
    out = estimates.replace(variance=np.full(estimates.n_areas, np.nan))

    for a in range(estimates.n_areas):
        in_area = idx == a
        if not np.any(in_area):
            continue
        we = residuals.weight[in_area] * residuals.residual[in_area]
        if clustered:
            clusters, inverse = np.unique(residuals.cluster_id[in_area], return_inverse=True)
            contributions = np.bincount(inverse, weights=we, minlength=clusters.size)
        else:
            contributions = we
        if contributions.size < 2:
            out.flags[a].add(FLAG_DEGENERATE)
            continue
        out.variance[a] = _with_replacement_variance(
            contributions, estimates.effective_weight_total[a]
        )
    return out


def logit_with_delta(estimates: AreaEstimateSet) -> AreaEstimateSet:
    """Populate logit-scale fields by the delta method.

    logit_variance = variance / (p*(1-p))^2 at the clamped probability.
    Estimates sitting at a boundary are pulled inside by the standard
    clamp (and flagged) so the transfer stays finite; degenerate-variance
    areas keep their flag and a NaN logit variance.
    """
    out = estimates.replace(
        logit_estimate=np.full(estimates.n_areas, np.nan),
        logit_variance=np.full(estimates.n_areas, np.nan),
    )
    eps = boundary_epsilon(estimates.effective_weight_total)
    for a in range(estimates.n_areas):
        p = estimates.estimate[a]
        if not np.isfinite(p):
            continue
        lo, hi = eps[a], 1.0 - eps[a]
        if not np.isfinite(lo):
            lo, hi = 0.005, 0.995
        p_in = min(max(p, lo), hi)
        if p_in != p:
            out.flags[a].add(FLAG_CLAMPED)
        out.logit_estimate[a] = logit(p_in)
        v = estimates.variance[a]
        if np.isfinite(v):
            out.logit_variance[a] = v / (p_in * (1.0 - p_in)) ** 2
    return out


class ModelAssistedEstimator(BaseEstimator):
    """Logistic-GREG estimator with a pluggable working model.

    Parameters
    ----------
    working_model : estimator, optional
        Any classifier with fit(X, y, sample_weight) and predict_proba;
        defaults to :class:`SurveyWeightedLogisticRegression`.
    clustered : bool
        Use the cluster-sampling variance adaptation.

    After ``fit``, ``working_model_`` is the fitted working model and
    ``estimates_`` the :class:`AreaEstimateSet` with logit fields populated.
    """

    def __init__(self, working_model=None, clustered: bool = False):
        self.working_model = working_model
        self.clustered = clustered

    def fit(
        self,
        data: SurveyDataset,
        frame: PopulationFrame,
        partition: AreaPartition | None = None,
    ):
        if partition is None:
            ids = np.unique(np.concatenate([np.asarray(data.area_id), np.asarray(frame.area_id)]))
            partition = AreaPartition.from_ids(ids)
        base = self.working_model if self.working_model is not None else SurveyWeightedLogisticRegression()
        model = clone(base)
        model.fit(data.covariates, data.response, sample_weight=data.weight)
        est = ma_estimate(data, frame, model, partition)
        est = ma_variance(working_residuals(data, model), est, clustered=self.clustered)
        self.working_model_ = model
        self.estimates_ = logit_with_delta(est)
        return self

    def fit_transform(self, data, frame, partition=None):
        return self.fit(data, frame, partition).estimates_


__all__ = [
    "ModelAssistedEstimator",
    "boundary_epsilon",
    "logit_with_delta",
    "ma_estimate",
    "ma_variance",
    "working_residuals",
]
