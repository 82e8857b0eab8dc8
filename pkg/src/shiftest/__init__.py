"""Counterfactual mean estimation under additive exposure shifts with
two-phase exposure sampling."""

__version__ = "0.1.0"

from ._accel import BACKEND, NUMBA_ENABLED
from .data import (
    DataError,
    ObservedDataset,
    ShiftSpec,
    SupportBound,
    estimate_support_bound,
    read_csv,
    shift,
    validate,
)
from .density import (
    CondDensityModel,
    GaussianDensityModel,
    fit_gaussian_density,
    fit_haldensify,
    predict_density,
)
from .estimators import (
    EstimateResult,
    estimate_grid,
    estimate_shift,
    onestep,
    tmle,
    wald_inference,
)
from .glm import GlmFit, fit_logistic, fit_wls
from .hal import BasisMap, HalModel, build_basis, fit_hal, predict_hal
from .msm import MsmFit, fit_msm, msm_from_results
from .simulate import DgpSpec, StudyConfig, generate, run_study, true_psi

__all__ = [
    "BACKEND",
    "NUMBA_ENABLED",
    "DataError",
    "ObservedDataset",
    "ShiftSpec",
    "SupportBound",
    "estimate_support_bound",
    "read_csv",
    "shift",
    "validate",
    "CondDensityModel",
    "GaussianDensityModel",
    "fit_gaussian_density",
    "fit_haldensify",
    "predict_density",
    "EstimateResult",
    "estimate_grid",
    "estimate_shift",
    "onestep",
    "tmle",
    "wald_inference",
    "GlmFit",
    "fit_logistic",
    "fit_wls",
    "BasisMap",
    "HalModel",
    "build_basis",
    "fit_hal",
    "predict_hal",
    "MsmFit",
    "fit_msm",
    "msm_from_results",
    "DgpSpec",
    "StudyConfig",
    "generate",
    "run_study",
    "true_psi",
]
