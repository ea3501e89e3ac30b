"""Core data model: samples, population frames, area partitions, estimate tables.

All containers are thin dataclasses over numpy arrays, validated on
construction. Estimation code treats them as immutable; operations that
"populate" fields return updated copies.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Per-area flags used throughout the pipeline.
FLAG_NO_DIRECT = "no_direct_estimate"
FLAG_NO_CORRECTION = "no_direct_correction"
FLAG_DEGENERATE = "degenerate_variance"
FLAG_CLAMPED = "clamped"
FLAG_NOT_DESIGN_CONSISTENT = "not_design_consistent"


def _as_id_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    return arr


@dataclass
class AreaPartition:
    """Ordered list of areas, optionally with known population sizes.

    ``population_sizes`` uses NaN for areas whose size is unknown. The
    ordering fixes the area order of every estimate table and of the
    spatial structure.
    """

    area_ids: np.ndarray
    population_sizes: np.ndarray | None = None

    def __post_init__(self):
        self.area_ids = _as_id_array(self.area_ids, "area_ids")
        if self.area_ids.size < 1:
            raise ValidationError("partition needs at least one area")
        if len(set(self.area_ids.tolist())) != self.area_ids.size:
            raise ValidationError("area_ids must be unique")
        if self.population_sizes is not None:
            sizes = np.asarray(self.population_sizes, dtype=float)
            if sizes.shape != self.area_ids.shape:
                raise ValidationError("population_sizes length must match area_ids")
            if np.any(sizes[np.isfinite(sizes)] < 0):
                raise ValidationError("population sizes must be nonnegative")
            self.population_sizes = sizes
        self._index = {aid: k for k, aid in enumerate(self.area_ids.tolist())}

    @property
    def n_areas(self) -> int:
        return self.area_ids.size

    def indexer(self, area_ids) -> np.ndarray:
        """Map an array of area ids to positions in this partition."""
        out = np.empty(len(area_ids), dtype=np.intp)
        for k, aid in enumerate(np.asarray(area_ids).tolist()):
            try:
                out[k] = self._index[aid]
            except KeyError:
                raise ValidationError(f"unknown area id {aid!r}") from None
        return out

    @classmethod
    def from_ids(cls, area_ids) -> "AreaPartition":
        return cls(np.asarray(area_ids))


@dataclass
class SurveyDataset:
    """Sampled units with design information and unit-level covariates."""

    unit_id: np.ndarray
    area_id: np.ndarray
    cluster_id: np.ndarray
    stratum_id: np.ndarray
    weight: np.ndarray
    response: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        self.unit_id = _as_id_array(self.unit_id, "unit_id")
        n = self.unit_id.size
        if n == 0:
            raise ValidationError("dataset contains no units")
        for name in ("area_id", "cluster_id", "stratum_id"):
            arr = _as_id_array(getattr(self, name), name)
            if arr.size != n:
                raise ValidationError(f"{name} length {arr.size} != {n} units")
            setattr(self, name, arr)
        if len(set(self.unit_id.tolist())) != n:
            raise ValidationError("unit_id values must be unique")
        self.weight = np.asarray(self.weight, dtype=float)
        if self.weight.shape != (n,):
            raise ValidationError("weight must be one value per unit")
        if not np.all(np.isfinite(self.weight)) or np.any(self.weight <= 0):
            raise ValidationError("weights must be strictly positive and finite")
        self.response = np.asarray(self.response)
        if self.response.shape != (n,):
            raise ValidationError("response must be one value per unit")
        if not np.all(np.isin(self.response, (0, 1))):
            raise ValidationError("responses must be binary 0/1")
        self.response = self.response.astype(float)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n:
            raise ValidationError("covariates must be an (n_units, p) matrix")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("covariates must be finite")

    @property
    def n(self) -> int:
        return self.unit_id.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def select_covariates(self, columns) -> "SurveyDataset":
        """Copy of the dataset keeping only the given covariate columns."""
        return dataclasses.replace(self, covariates=self.covariates[:, list(columns)])


@dataclass
class PopulationFrame:
    """Population cells for prediction aggregation.

    A cell with count 1 is an individual; a cell with a larger count is a
    pixel- or cluster-level aggregate sharing one covariate vector.
    """

    cell_id: np.ndarray
    area_id: np.ndarray
    count: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        self.cell_id = _as_id_array(self.cell_id, "cell_id")
        m = self.cell_id.size
        if m == 0:
            raise ValidationError("population frame contains no cells")
        self.area_id = _as_id_array(self.area_id, "area_id")
        if self.area_id.size != m:
            raise ValidationError("area_id length must match cells")
        self.count = np.asarray(self.count, dtype=float)
        if self.count.shape != (m,):
            raise ValidationError("count must be one value per cell")
        if not np.all(np.isfinite(self.count)) or np.any(self.count <= 0):
            raise ValidationError("cell counts must be strictly positive and finite")
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != m:
            raise ValidationError("covariates must be an (n_cells, p) matrix")
        if not np.all(np.isfinite(self.covariates)):
            raise ValidationError("covariates must be finite")

    @property
    def n_cells(self) -> int:
        return self.cell_id.size

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def area_totals(self, partition: AreaPartition) -> np.ndarray:
        idx = partition.indexer(self.area_id)
        return np.bincount(idx, weights=self.count, minlength=partition.n_areas)

    def select_covariates(self, columns) -> "PopulationFrame":
        return dataclasses.replace(self, covariates=self.covariates[:, list(columns)])


@dataclass
class AreaEstimateSet:
    """Per-area point estimates with design variances on both scales.

    Arrays follow the partition's area order. Fields not yet populated
    hold NaN. ``effective_weight_total`` is the sum of sampled weights in
    the area (the Hajek denominator), 0 where nothing was sampled.
    """

    area_ids: np.ndarray
    estimate: np.ndarray
    variance: np.ndarray
    logit_estimate: np.ndarray
    logit_variance: np.ndarray
    effective_weight_total: np.ndarray
    sample_size: np.ndarray
    method: str = ""
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.area_ids = _as_id_array(self.area_ids, "area_ids")
        A = self.area_ids.size
        for name in ("estimate", "variance", "logit_estimate", "logit_variance",
                     "effective_weight_total"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (A,):
                raise ValidationError(f"{name} must have one value per area")
            setattr(self, name, arr)
        self.sample_size = np.asarray(self.sample_size, dtype=int)
        if self.sample_size.shape != (A,):
            raise ValidationError("sample_size must have one value per area")
        if not self.flags:
            self.flags = [set() for _ in range(A)]
        if len(self.flags) != A:
            raise ValidationError("flags must have one entry per area")
        finite = np.isfinite(self.estimate)
        if np.any(self.estimate[finite] < 0) or np.any(self.estimate[finite] > 1):
            raise ValidationError("estimates must lie in [0, 1]")

    @property
    def n_areas(self) -> int:
        return self.area_ids.size

    def observed_mask(self) -> np.ndarray:
        """Areas usable in a smoothing likelihood: finite logit estimate and
        variance, not flagged degenerate or direct-estimate-free."""
        ok = np.isfinite(self.logit_estimate) & np.isfinite(self.logit_variance)
        for k, fl in enumerate(self.flags):
            if FLAG_DEGENERATE in fl or FLAG_NO_DIRECT in fl or FLAG_NO_CORRECTION in fl:
                ok[k] = False
        return ok

    def replace(self, **kwargs) -> "AreaEstimateSet":
        out = dataclasses.replace(self, **kwargs)
        if "flags" not in kwargs:
            out.flags = [set(fl) for fl in self.flags]
        return out


@dataclass
class ResidualSet:
    """Working-model residuals e_i = yhat_i - y_i with design information."""

    residual: np.ndarray
    weight: np.ndarray
    area_id: np.ndarray
    cluster_id: np.ndarray

    def __post_init__(self):
        self.residual = np.asarray(self.residual, dtype=float)
        n = self.residual.size
        self.weight = np.asarray(self.weight, dtype=float)
        self.area_id = _as_id_array(self.area_id, "area_id")
        self.cluster_id = _as_id_array(self.cluster_id, "cluster_id")
        if not (self.weight.size == self.area_id.size == self.cluster_id.size == n):
            raise ValidationError("residual set arrays must share one length")
        if np.any(np.abs(self.residual) > 1 + 1e-12):
            raise ValidationError("binary-response residuals cannot exceed 1 in magnitude")
