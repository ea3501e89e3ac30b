"""Spatial structure for area effects: scaled ICAR precision, BYM2
covariance, and penalized-complexity priors for the variance and mixing
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.special import logsumexp
from scipy.sparse.csgraph import connected_components

from .errors import CalibrationError, ValidationError

_EIG_TOL = 1e-10


@dataclass
class SpatialStructure:
    """Adjacency graph with its scaled ICAR generalized-inverse eigensystem.

    ``scaled_covariance`` is the generalized inverse of the graph Laplacian
    divided by the geometric mean of its marginal variances, so the
    marginal variances of the structured effect have geometric mean one.
    ``eigenvalues``/``eigenvectors`` diagonalize the scaled covariance;
    exactly one eigenvalue is zero (the constant direction), encoding the
    sum-to-zero constraint.
    """

    area_ids: np.ndarray
    edges: np.ndarray
    icar_precision: np.ndarray
    scaled_covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    scaling_factor: float

    @property
    def n_areas(self) -> int:
        return self.area_ids.size

    def nonzero_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues > 0]

    def draw_scaled_field(self, rng: np.random.Generator, variance: float = 1.0) -> np.ndarray:
        """One draw of the sum-to-zero structured field with the given variance."""
        nz = self.eigenvalues > 0
        z = rng.standard_normal(int(nz.sum()))
        return self.eigenvectors[:, nz] @ (np.sqrt(variance * self.eigenvalues[nz]) * z)


def build_spatial_structure(area_ids, edges) -> SpatialStructure:
    """Assemble the scaled ICAR structure for an undirected adjacency graph.

    ``edges`` are pairs of area ids. The graph must be connected, have at
    least two areas, and no self-loops; a disconnected graph is rejected
    rather than scaled per component.
    """
    area_ids = np.asarray(area_ids)
    A = area_ids.size
    if A < 2:
        raise ValidationError("spatial structure needs at least two areas")
    if len(set(area_ids.tolist())) != A:
        raise ValidationError("area_ids must be unique")
    index = {aid: k for k, aid in enumerate(area_ids.tolist())}

    W = np.zeros((A, A))
    edge_idx = []
    for pair in edges:
        if len(pair) != 2:
            raise ValidationError(f"adjacency edge {pair!r} is not a pair")
        a, b = pair
        if a not in index or b not in index:
            missing = a if a not in index else b
            raise ValidationError(f"adjacency references unknown area {missing!r}")
        i, j = index[a], index[b]
        if i == j:
            raise ValidationError(f"self-loop on area {a!r}")
        W[i, j] = W[j, i] = 1.0
        edge_idx.append((min(i, j), max(i, j)))
    edge_idx = np.array(sorted(set(edge_idx)), dtype=int).reshape(-1, 2)

    n_comp, _ = connected_components(scipy.sparse.csr_matrix(W), directed=False)
    if n_comp != 1:
        raise ValidationError(
            f"adjacency graph has {n_comp} connected components; "
            "the scaling recipe requires a single connected graph"
        )

    precision = np.diag(W.sum(axis=1)) - W
    lam, vec = np.linalg.eigh(precision)
    nonzero = lam > _EIG_TOL * lam.max()
    if int(np.sum(~nonzero)) != 1:
        raise ValidationError("graph Laplacian must have exactly one zero eigenvalue")

    gen_inverse = (vec[:, nonzero] / lam[nonzero]) @ vec[:, nonzero].T
    scaling = float(np.exp(np.mean(np.log(np.diag(gen_inverse)))))
    scaled = gen_inverse / scaling

    eigenvalues = 1.0 / (scaling * np.where(nonzero, lam, np.inf))
    order = np.argsort(eigenvalues)
    return SpatialStructure(
        area_ids=area_ids,
        edges=edge_idx,
        icar_precision=precision,
        scaled_covariance=scaled,
        eigenvalues=eigenvalues[order],
        eigenvectors=vec[:, order],
        scaling_factor=scaling,
    )


def bym2_covariance(structure: SpatialStructure, sigma: float, phi: float) -> np.ndarray:
    """Total-effect covariance sigma^2 * ((1-phi) I + phi * scaled_covariance)."""
    if not 0.0 <= phi <= 1.0:
        raise ValidationError(f"phi must lie in [0, 1], got {phi}")
    if sigma < 0:
        raise ValidationError(f"sigma must be nonnegative, got {sigma}")
    A = structure.n_areas
    return sigma**2 * ((1.0 - phi) * np.eye(A) + phi * structure.scaled_covariance)


@dataclass
class SigmaPCPrior:
    """Exponential prior on a standard deviation: rate chosen so
    P(sigma > threshold) = tail_prob."""

    threshold: float
    tail_prob: float
    rate: float

    def pdf(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return np.where(sigma >= 0, self.rate * np.exp(-self.rate * sigma), 0.0)

    def logpdf(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return np.where(sigma >= 0, np.log(self.rate) - self.rate * sigma, -np.inf)

    def tail(self, sigma0: float) -> float:
        return float(np.exp(-self.rate * sigma0))


def pc_prior_sigma(threshold: float, tail_prob: float) -> SigmaPCPrior:
    """Exponential PC prior on sigma with P(sigma > threshold) = tail_prob."""
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    if not 0.0 < tail_prob < 1.0:
        raise ValidationError("tail probability must lie in (0, 1)")
    return SigmaPCPrior(threshold, tail_prob, rate=-np.log(tail_prob) / threshold)


class PhiPCPrior:
    """Prior on the BYM2 mixing parameter built from the Kullback-Leibler
    distance to the unstructured base model.

    The distance is d(phi) = sqrt(2*KLD(phi)) computed on the non-null
    eigenspace of the scaled structure; the density is proportional to
    exp(-rate*d(phi)) * |d'(phi)| with the rate calibrated so that
    P(phi > threshold) = tail_prob. When the requested tail mass exceeds
    what a decaying exponential can deliver, the calibrated rate is
    negative (mass tilted toward the structured model); the density is
    proper on [0, 1] either way.
    """

    GRID_SIZE = 2001

    def __init__(self, structure: SpatialStructure, threshold: float, tail_prob: float):
        if not 0.0 < threshold < 1.0:
            raise ValidationError("threshold must lie in (0, 1)")
        if not 0.0 < tail_prob < 1.0:
            raise ValidationError("tail probability must lie in (0, 1)")
        self.threshold = threshold
        self.tail_prob = tail_prob
        self._gamma = structure.nonzero_eigenvalues()
        if np.allclose(self._gamma, 1.0):
            raise CalibrationError("structure is indistinguishable from the iid base model")
        self._grid = np.linspace(0.0, 1.0, self.GRID_SIZE)
        self._tail_grid = np.linspace(threshold, 1.0, self.GRID_SIZE)
        self.rate = self._calibrate()
        self._log_norm = self._log_integral(self._grid, self.rate)

    # -- distance machinery -------------------------------------------------

    def kld(self, phi):
        phi = np.asarray(phi, dtype=float)
        x = phi[..., None] * (self._gamma - 1.0)
        return 0.5 * np.sum(x - np.log1p(x), axis=-1)

    def distance(self, phi):
        return np.sqrt(2.0 * self.kld(phi))

    def distance_deriv(self, phi):
        phi = np.asarray(phi, dtype=float)
        g1 = self._gamma - 1.0
        slope0 = np.sqrt(0.5 * np.sum(g1 * g1))
        x = phi[..., None] * g1
        kld_deriv = 0.5 * np.sum(g1 * (1.0 - 1.0 / (1.0 + x)), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.distance(phi)
            out = np.where(d > 0, kld_deriv / np.where(d > 0, d, 1.0), slope0)
        return out

    # -- calibration ---------------------------------------------------------

    def _log_unnorm(self, phi, rate):
        return -rate * self.distance(phi) + np.log(self.distance_deriv(phi))

    def _log_integral(self, grid, rate):
        log_f = self._log_unnorm(grid, rate)
        h = grid[1] - grid[0]
        log_w = np.full(grid.size, np.log(h))
        log_w[0] = log_w[-1] = np.log(h / 2.0)
        return float(logsumexp(log_f + log_w))

    def _tail_fraction(self, rate) -> float:
        return float(np.exp(self._log_integral(self._tail_grid, rate)
                            - self._log_integral(self._grid, rate)))

    def _calibrate(self) -> float:
        lo, hi = -1.0, 1.0
        for _ in range(60):
            if self._tail_fraction(lo) >= self.tail_prob:
                break
            lo *= 2.0
        else:
            raise CalibrationError(
                "tail probability not attainable; attainable range is "
                f"({self._tail_fraction(hi):.3g}, {self._tail_fraction(lo):.3g})"
            )
        for _ in range(60):
            if self._tail_fraction(hi) <= self.tail_prob:
                break
            hi *= 2.0
        else:
            raise CalibrationError(
                "tail probability not attainable; attainable range is "
                f"({self._tail_fraction(hi):.3g}, {self._tail_fraction(lo):.3g})"
            )
        while hi - lo > 1e-8:
            mid = 0.5 * (lo + hi)
            if self._tail_fraction(mid) >= self.tail_prob:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    # -- density -------------------------------------------------------------

    def logpdf(self, phi):
        phi = np.asarray(phi, dtype=float)
        if np.any(phi < 0) or np.any(phi > 1):
            raise ValidationError("phi must lie in [0, 1]")
        return self._log_unnorm(phi, self.rate) - self._log_norm

    def pdf(self, phi):
        return np.exp(self.logpdf(phi))

    def tail(self, phi0: float) -> float:
        grid = np.linspace(phi0, 1.0, self.GRID_SIZE)
        return float(np.exp(self._log_integral(grid, self.rate) - self._log_norm))


def pc_prior_phi(structure: SpatialStructure, threshold: float, tail_prob: float) -> PhiPCPrior:
    """PC prior on the BYM2 mixing parameter, calibrated by bisection."""
    return PhiPCPrior(structure, threshold, tail_prob)


__all__ = [
    "PhiPCPrior",
    "SigmaPCPrior",
    "SpatialStructure",
    "build_spatial_structure",
    "bym2_covariance",
    "pc_prior_phi",
    "pc_prior_sigma",
]
