"""Small area estimation of proportions under complex survey designs.

Two-stage pipeline: design-based area estimates (direct Hajek or logistic
GREG with a survey-weighted working model) feed a logit-scale area-level
smoothing model with iid or BYM2 spatial random effects, penalized
complexity priors, and exact grid-based posterior computation. A
simulation engine compares the estimators under informative stratified
cluster sampling.
"""

__version__ = "0.1.0"

from .data import (
    AreaEstimateSet,
    AreaPartition,
    PopulationFrame,
    ResidualSet,
    SurveyDataset,
)
from .direct import HajekEstimator, hajek_estimate, hajek_variance
from .errors import (
    CalibrationError,
    ConvergenceError,
    NumericalError,
    SeparationError,
    SmallAreaError,
    ValidationError,
)
from .model_assisted import (
    ModelAssistedEstimator,
    logit_with_delta,
    ma_estimate,
    ma_variance,
    working_residuals,
)
from .simulation import (
    SimulationConfig,
    SimulationMetrics,
    compute_metrics,
    draw_informative_sample,
    generate_population,
    run_study,
)
from .smoothing import (
    HyperparameterGrid,
    SmoothingModel,
    SmoothingResult,
    fit_smoothing_model,
    smooth_direct,
    smooth_ma,
)
from .spatial import (
    SpatialStructure,
    build_spatial_structure,
    bym2_covariance,
    pc_prior_phi,
    pc_prior_sigma,
)
from .working import SurveyWeightedLogisticRegression, fit_working_model, predict_frame

__all__ = [
    "AreaEstimateSet",
    "AreaPartition",
    "CalibrationError",
    "ConvergenceError",
    "HajekEstimator",
    "HyperparameterGrid",
    "ModelAssistedEstimator",
    "NumericalError",
    "PopulationFrame",
    "ResidualSet",
    "SeparationError",
    "SimulationConfig",
    "SimulationMetrics",
    "SmallAreaError",
    "SmoothingModel",
    "SmoothingResult",
    "SpatialStructure",
    "SurveyDataset",
    "SurveyWeightedLogisticRegression",
    "ValidationError",
    "build_spatial_structure",
    "bym2_covariance",
    "compute_metrics",
    "draw_informative_sample",
    "fit_smoothing_model",
    "fit_working_model",
    "generate_population",
    "hajek_estimate",
    "hajek_variance",
    "logit_with_delta",
    "ma_estimate",
    "ma_variance",
    "pc_prior_phi",
    "pc_prior_sigma",
    "predict_frame",
    "run_study",
    "smooth_direct",
    "smooth_ma",
    "working_residuals",
]
