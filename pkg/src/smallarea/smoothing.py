"""Logit-scale area-level smoothing with exact grid-based Bayesian inference.

The observation model is Gaussian on the logit scale with known design
variances, the linking model is Gaussian with iid or BYM2 area effects and
a flat prior on fixed effects, so conditional on the hyperparameters the
posterior is exactly Gaussian. Hyperparameters are integrated over a grid:
per node the restricted marginal likelihood absorbs the flat fixed-effect
prior, node weights combine likelihood, priors, and cell quadrature
measure, and posterior draws resample nodes before drawing the Gaussian
conditionals exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit, logsumexp
from sklearn.base import BaseEstimator

from .data import FLAG_NOT_DESIGN_CONSISTENT, AreaEstimateSet
from .errors import NumericalError, ValidationError
from .spatial import SpatialStructure, bym2_covariance, pc_prior_phi, pc_prior_sigma


@dataclass
class HyperparameterGrid:
    """Retained grid nodes with normalized posterior weights.

    ``phi`` is NaN for the iid model. ``node_index`` is the node's position
    in the full (untrimmed) grid and keys its draw stream.
    """

    log_sigma: np.ndarray
    phi: np.ndarray
    log_likelihood: np.ndarray
    log_posterior_weight: np.ndarray
    node_index: np.ndarray
    normalized: bool = True

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_posterior_weight)


@dataclass
class SmoothingResult:
    """Posterior draws and summaries for every area."""

    area_ids: np.ndarray
    draws: np.ndarray
    median: np.ndarray
    lower90: np.ndarray
    upper90: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    grid: HyperparameterGrid
    beta_draws: np.ndarray
    flags: list
    method: str = ""
    warnings: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def _robust_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, falling back to an eigenvalue square root for
    covariances that are only positive semidefinite."""
    try:
        return np.linalg.cholesky(cov + 1e-12 * np.trace(cov) / cov.shape[0] * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh((cov + cov.T) / 2.0)
        return vec * np.sqrt(np.clip(lam, 0.0, None))


def _cell_log_widths(grid: np.ndarray) -> np.ndarray:
    """Trapezoid cell widths for a sorted 1-D grid (half cells at the ends)."""
    if grid.size == 1:
        return np.zeros(1)
    widths = np.empty(grid.size)
    widths[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    widths[0] = (grid[1] - grid[0]) / 2.0
    widths[-1] = (grid[-1] - grid[-2]) / 2.0
    return np.log(widths)


def _restricted_loglik(C: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Gaussian restricted (residual) log marginal likelihood, integrating the
    fixed effects under a flat prior. Returns the log-likelihood plus the
    pieces needed for exact conditional draws."""
    chol = scipy.linalg.cho_factor(C, lower=True)
    logdet_C = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    Ci_X = scipy.linalg.cho_solve(chol, X)
    Ci_y = scipy.linalg.cho_solve(chol, y)
    xtcx = X.T @ Ci_X
    sign, logdet_xtcx = np.linalg.slogdet(xtcx)
    if sign <= 0:
        raise NumericalError("area covariate matrix lost rank under the marginal covariance")
    beta_hat = np.linalg.solve(xtcx, X.T @ Ci_y)
    r = y - X @ beta_hat
    quad = float(r @ (Ci_y - Ci_X @ beta_hat))
    loglik = -0.5 * (logdet_C + logdet_xtcx + quad)
    return loglik, beta_hat, xtcx, chol


class SmoothingModel(BaseEstimator):
    """Area-level smoothing model with iid or BYM2 random effects.

    Parameters
    ----------
    random_effects : {"iid", "bym2"}
        Structure of the area effects; "bym2" requires a spatial structure
        at fit time.
    pc_sigma_threshold, pc_sigma_tail : float
        Calibration P(sigma > threshold) = tail for the effect sd prior.
    pc_phi_threshold, pc_phi_tail : float
        Calibration P(phi > threshold) = tail for the mixing prior.
    log_sigma_range, n_sigma : grid over log sigma.
    phi_bounds, n_phi : logit-spaced grid over phi.
    trim_log_weight : float
        Drop grid nodes this many log units below the best node.
    n_draws : int
        Posterior draws; fewer than 1000 records a warning.
    random_state : int or None
        Seed for the draw streams; per-node streams are keyed by node index
        so results do not depend on evaluation order.
    """

    def __init__(self, random_effects: str = "iid",
                 pc_sigma_threshold: float = 5.0, pc_sigma_tail: float = 0.01,
                 pc_phi_threshold: float = 0.5, pc_phi_tail: float = 2.0 / 3.0,
                 log_sigma_range: tuple = (-6.0, 3.0), n_sigma: int = 41,
                 phi_bounds: tuple = (0.001, 0.999), n_phi: int = 41,
                 trim_log_weight: float = 12.0, n_draws: int = 1000,
                 random_state: int | None = None):
        self.random_effects = random_effects
        self.pc_sigma_threshold = pc_sigma_threshold
        self.pc_sigma_tail = pc_sigma_tail
        self.pc_phi_threshold = pc_phi_threshold
        self.pc_phi_tail = pc_phi_tail
        self.log_sigma_range = log_sigma_range
        self.n_sigma = n_sigma
        self.phi_bounds = phi_bounds
        self.n_phi = n_phi
        self.trim_log_weight = trim_log_weight
        self.n_draws = n_draws
        self.random_state = random_state

    # -- grid assembly -------------------------------------------------------

    def _sigma_grid(self) -> np.ndarray:
        lo, hi = self.log_sigma_range
        return np.linspace(lo, hi, self.n_sigma)

    def _phi_grid(self) -> np.ndarray:
        lo, hi = self.phi_bounds
        if self.n_phi == 1:
            return np.array([lo])
        return expit(np.linspace(np.log(lo / (1 - lo)), np.log(hi / (1 - hi)), self.n_phi))

    def fit(self, estimates: AreaEstimateSet, X=None, structure: SpatialStructure | None = None):
        if self.random_effects not in ("iid", "bym2"):
            raise ValidationError(f"unknown random_effects {self.random_effects!r}")
        spatial = self.random_effects == "bym2"
        if spatial and structure is None:
            raise ValidationError("bym2 random effects require a spatial structure")

        A = estimates.n_areas
        if X is None:
            X = np.ones((A, 1))
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != A:
            raise ValidationError("X must be an (n_areas, q) matrix")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise ValidationError("area covariate matrix must have full column rank")
        if spatial and structure.n_areas != A:
            raise ValidationError("spatial structure and estimates disagree on areas")

        obs = estimates.observed_mask()
        n_obs = int(obs.sum())
        if n_obs == 0:
            raise NumericalError("no areas carry a usable direct estimate and variance")
        if n_obs <= X.shape[1]:
            raise NumericalError(
                f"only {n_obs} observed areas for {X.shape[1]} fixed effects"
            )

        result_warnings = []
        if self.n_draws < 1000:
            msg = f"n_draws={self.n_draws} is below the recommended 1000"
            warnings.warn(msg)
            result_warnings.append(msg)

        y = estimates.logit_estimate[obs]
        D = np.diag(estimates.logit_variance[obs])
        X_obs = X[obs]
        scaled_cov = structure.scaled_covariance if spatial else np.eye(A)

        sigma_prior = pc_prior_sigma(self.pc_sigma_threshold, self.pc_sigma_tail)
        log_sigma_grid = self._sigma_grid()
        sigma_cells = _cell_log_widths(log_sigma_grid)
        if spatial:
            phi_prior = pc_prior_phi(structure, self.pc_phi_threshold, self.pc_phi_tail)
            phi_grid = self._phi_grid()
            phi_cells = _cell_log_widths(phi_grid)
        else:
            phi_grid = np.array([0.0])
            phi_cells = np.zeros(1)

        # Node order: sigma-major, phi-minor; node_index is the position in
        # this full grid and keys the node's draw stream.
        n_nodes = log_sigma_grid.size * phi_grid.size
        node_log_sigma = np.repeat(log_sigma_grid, phi_grid.size)
        node_phi = np.tile(phi_grid, log_sigma_grid.size)
        node_loglik = np.empty(n_nodes)
        node_log_weight = np.empty(n_nodes)
        node_cache = []
        for k in range(n_nodes):
            sigma = float(np.exp(node_log_sigma[k]))
            phi = float(node_phi[k])
            mix = (1.0 - phi) * np.eye(A) + phi * scaled_cov if spatial else np.eye(A)
            sigma_u = sigma**2 * mix
            C = sigma_u[np.ix_(obs, obs)] + D
            loglik, beta_hat, xtcx, chol = _restricted_loglik(C, X_obs, y)
            node_loglik[k] = loglik
            # prior density in log-sigma space: pi(sigma) * sigma
            log_prior = float(sigma_prior.logpdf(sigma)) + node_log_sigma[k]
            log_cell = sigma_cells[k // phi_grid.size] + phi_cells[k % phi_grid.size]
            if spatial:
                log_prior += float(phi_prior.logpdf(phi))
            node_log_weight[k] = loglik + log_prior + log_cell
            node_cache.append((sigma_u, beta_hat, xtcx, chol))

        keep = node_log_weight >= node_log_weight.max() - self.trim_log_weight
        kept_idx = np.flatnonzero(keep)
        log_w = node_log_weight[kept_idx]
        log_w = log_w - logsumexp(log_w)

        grid = HyperparameterGrid(
            log_sigma=node_log_sigma[kept_idx],
            phi=node_phi[kept_idx] if spatial else np.full(kept_idx.size, np.nan),
            log_likelihood=node_loglik[kept_idx],
            log_posterior_weight=log_w,
            node_index=kept_idx,
        )

        draws, beta_draws = self._sample(
            grid, node_cache, estimates, X, obs
        )

        flags = [set(fl) for fl in estimates.flags]
        for a in np.flatnonzero(~obs):
            flags[a].add(FLAG_NOT_DESIGN_CONSISTENT)

        self.result_ = SmoothingResult(
            area_ids=estimates.area_ids,
            draws=draws,
            median=np.quantile(draws, 0.5, axis=0),
            lower90=np.quantile(draws, 0.05, axis=0),
            upper90=np.quantile(draws, 0.95, axis=0),
            mean=draws.mean(axis=0),
            sd=draws.std(axis=0, ddof=1),
            grid=grid,
            beta_draws=beta_draws,
            flags=flags,
            method=f"smoothed_{self.random_effects}",
            warnings=result_warnings,
        )
        return self

    # -- exact conditional draws ----------------------------------------------

    def _sample(self, grid, node_cache, estimates, X, obs):
        A = estimates.n_areas
        q = X.shape[1]
        unobs = ~obs
        y = estimates.logit_estimate[obs]
        X_obs = X[obs]

        seed = self.random_state
        entropy = seed if seed is not None else np.random.SeedSequence().entropy
        master = np.random.default_rng(np.random.SeedSequence([int(entropy), 101]))
        counts = master.multinomial(self.n_draws, grid.weights / grid.weights.sum())

        eta = np.empty((self.n_draws, A))
        betas = np.empty((self.n_draws, q))
        pos = 0
        for j, count in enumerate(counts):
            if count == 0:
                continue
            node = int(grid.node_index[j])
            sigma_u, beta_hat, xtcx, chol = node_cache[node]
            rng = np.random.default_rng(np.random.SeedSequence([int(entropy), 7, node]))

            # beta | theta, data: N(beta_hat, (X' C^-1 X)^-1); the factor of
            # the inverse is the inverse-transposed Cholesky of xtcx.
            L_xtcx = np.linalg.cholesky(xtcx)
            z = rng.standard_normal((count, q))
            beta = beta_hat + scipy.linalg.solve_triangular(L_xtcx, z.T, lower=True, trans="T").T

            S_oo = sigma_u[np.ix_(obs, obs)]
            Ci_S = scipy.linalg.cho_solve(chol, S_oo)
            u_cov = S_oo - S_oo @ Ci_S
            L_u = _robust_cholesky(u_cov)
            resid = y[None, :] - beta @ X_obs.T
            u_mean = (S_oo @ scipy.linalg.cho_solve(chol, resid.T)).T
            u_obs = u_mean + rng.standard_normal((count, int(obs.sum()))) @ L_u.T

            u_all = np.zeros((count, A))
            u_all[:, obs] = u_obs
            if np.any(unobs):
                S_uo = sigma_u[np.ix_(unobs, obs)]
                S_uu = sigma_u[np.ix_(unobs, unobs)]
                gain = np.linalg.solve(S_oo, S_uo.T).T
                cond_cov = S_uu - gain @ S_uo.T
                L_c = _robust_cholesky(cond_cov)
                cond_mean = u_obs @ gain.T
                u_all[:, unobs] = cond_mean + rng.standard_normal(
                    (count, int(unobs.sum()))
                ) @ L_c.T

            eta[pos:pos + count] = beta @ X.T + u_all
            betas[pos:pos + count] = beta
            pos += count
        return expit(eta), betas


def fit_smoothing_model(
    estimates: AreaEstimateSet,
    X=None,
    structure: SpatialStructure | None = None,
    **params,
) -> SmoothingResult:
    """Fit the smoothing model and return its result. ``structure=None``
    selects iid area effects."""
    random_effects = "bym2" if structure is not None else "iid"
    model = SmoothingModel(random_effects=random_effects, **params)
    return model.fit(estimates, X=X, structure=structure).result_


def smooth_direct(
    estimates: AreaEstimateSet,
    X=None,
    structure: SpatialStructure | None = None,
    **params,
) -> SmoothingResult:
    """Smoothed direct estimator: area-level model applied to Hajek inputs."""
    result = fit_smoothing_model(estimates, X=X, structure=structure, **params)
    result.method = "sh_spatial" if structure is not None else "sh_iid"
    return result


def smooth_ma(
    estimates: AreaEstimateSet,
    X=None,
    structure: SpatialStructure | None = None,
    **params,
) -> SmoothingResult:
    """Smoothed model-assisted estimator: the same model on GREG inputs."""
    result = fit_smoothing_model(estimates, X=X, structure=structure, **params)
    result.method = "sma_spatial" if structure is not None else "sma_iid"
    return result


__all__ = [
    "HyperparameterGrid",
    "SmoothingModel",
    "SmoothingResult",
    "fit_smoothing_model",
    "smooth_direct",
    "smooth_ma",
]
