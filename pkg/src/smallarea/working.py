"""Survey-weighted logistic regression fit by safeguarded IRLS.

This is the stage-one working model: one global fit across all areas,
intercept always included, weights entering the Bernoulli log-likelihood
multiplicatively.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import PopulationFrame, SurveyDataset
from .errors import SeparationError, ValidationError

# Linear predictors are clamped to +-LINPRED_CLIP before expit; beyond the
# clamp the probabilities are 0/1 to machine precision anyway.
LINPRED_CLIP = 30.0


def _weighted_deviance(w: np.ndarray, y: np.ndarray, eta: np.ndarray) -> float:
    # -2 * sum w * (y*log(mu) + (1-y)*log(1-mu)), computed via log-expit for
    # stability at large |eta|.
    return float(-2.0 * np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))


def _check_full_rank(design: np.ndarray, column_names: list[str]) -> None:
    r = scipy.linalg.qr(design, mode="r", pivoting=True)
    rdiag = np.abs(np.diag(r[0]))
    tol = rdiag.max() * max(design.shape) * np.finfo(float).eps
    rank = int(np.sum(rdiag > tol))
    if rank < design.shape[1]:
        bad = sorted(r[1][rank:])
        names = ", ".join(column_names[j] for j in bad)
        raise ValidationError(f"design matrix is rank deficient; offending columns: {names}")


class SurveyWeightedLogisticRegression(BaseEstimator):
    """Weighted maximum-likelihood logistic regression.

    Maximizes sum_i w_i * loglik(y_i; gamma) for a Bernoulli-logit model by
    iteratively reweighted least squares with step halving. The intercept
    is always included; pass covariates without a constant column.

    Parameters
    ----------
    score_tol : float
        Convergence requires max-norm of the weighted score below this;
        iteration also stops when no step-halving can reduce the deviance
        or after ``max_iter`` Newton steps.
    max_iter : int
        Newton iteration cap.
    max_halvings : int
        Step halvings allowed per iteration when the deviance increases.
    """

    def __init__(self, score_tol: float = 1e-8, max_iter: int = 50,
                 max_halvings: int = 10):
        self.score_tol = score_tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_min_features=0, ensure_2d=True, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if y.size != X.shape[0]:
            raise ValidationError("X and y disagree on the number of units")
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValidationError("responses must be binary 0/1")
        w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if w.shape != y.shape or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValidationError("sample weights must be strictly positive and finite")

        n, p = X.shape
        design = np.column_stack([np.ones(n), X])
        if n < p + 2:
            raise ValidationError(f"need at least {p + 2} units to fit {p + 1} coefficients")
        names = ["intercept"] + [f"z{j + 1}" for j in range(p)]
        _check_full_rank(design, names)

        gamma = np.zeros(p + 1)
        eta = design @ gamma
        deviance = _weighted_deviance(w, y, eta)
        converged = False
        prev_step_norm = np.inf
        it = 0
        for it in range(1, self.max_iter + 1):
            mu = expit(eta)
            score = design.T @ (w * (y - mu))
            score_norm = float(np.max(np.abs(score)))
            if score_norm <= self.score_tol:
                converged = True
                break
            irls_w = np.maximum(w * mu * (1.0 - mu), 1e-300)
            hessian = design.T @ (design * irls_w[:, None])
            try:
                delta = np.linalg.solve(hessian, score)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(hessian, score, rcond=None)[0]

            step = 1.0
            cand_gamma, cand_eta, cand_dev = gamma, eta, deviance
            improved = False
            for _ in range(self.max_halvings + 1):
                trial = gamma + step * delta
                trial_eta = design @ trial
                trial_dev = _weighted_deviance(w, y, trial_eta)
                if trial_dev <= deviance * (1.0 + 1e-14) + 1e-14:
                    cand_gamma, cand_eta, cand_dev = trial, trial_eta, trial_dev
                    improved = True
                    break
                step *= 0.5
            step_norm = float(np.linalg.norm(step * delta))
            if np.max(np.abs(cand_gamma)) > 15.0 and step_norm >= prev_step_norm:
                raise SeparationError(
                    "coefficients diverging beyond +-15 with non-shrinking steps; "
                    "the data are likely separated -- remove the offending covariate"
                )
            prev_step_norm = step_norm
            if not improved:
                break
            # a deviance stall alone does not stop the loop: the Newton
            # polish continues until the score criterion holds or max_iter
            gamma, eta, deviance = cand_gamma, cand_eta, cand_dev

        mu = expit(eta)
        self.score_norm_ = float(np.max(np.abs(design.T @ (w * (y - mu)))))
        self.converged_ = bool(self.score_norm_ <= self.score_tol)
        self.n_iter_ = it
        self.deviance_ = deviance
        self.intercept_ = float(gamma[0])
        self.coef_ = gamma[1:].copy()
        self.n_features_in_ = p
        self.classes_ = np.array([0, 1])
        return self

    @property
    def coefficients_(self) -> np.ndarray:
        """Full coefficient vector, intercept first."""
        check_is_fitted(self, "coef_")
        return np.concatenate([[self.intercept_], self.coef_])

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_features=0, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"X has {X.shape[1]} covariates, model was fit with {self.n_features_in_}"
            )
        return self.intercept_ + X @ self.coef_

    def predict_proba(self, X) -> np.ndarray:
        eta = np.clip(self.decision_function(X), -LINPRED_CLIP, LINPRED_CLIP)
        p1 = expit(eta)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= 0).astype(int)


def fit_working_model(
    data: SurveyDataset,
    columns=None,
    **params,
) -> SurveyWeightedLogisticRegression:
    """Fit the working model on a survey dataset (optionally a covariate subset)."""
    X = data.covariates if columns is None else data.covariates[:, list(columns)]
    model = SurveyWeightedLogisticRegression(**params)
    return model.fit(X, data.response, sample_weight=data.weight)


def predicted_success_probability(model, X) -> np.ndarray:
    """P(y=1) from any fitted classifier with a predict_proba contract."""
    proba = model.predict_proba(X)
    classes = list(getattr(model, "classes_", [0, 1]))
    return np.asarray(proba)[:, classes.index(1)]


def predict_frame(model, frame: PopulationFrame) -> np.ndarray:
    """Per-cell working predictions for a population frame."""
    if frame.p != getattr(model, "n_features_in_", frame.p):
        raise ValidationError(
            f"frame has {frame.p} covariates, model was fit with {model.n_features_in_}"
        )
    return predicted_success_probability(model, frame.covariates)


__all__ = [
    "SurveyWeightedLogisticRegression",
    "fit_working_model",
    "predict_frame",
    "predicted_success_probability",
]
