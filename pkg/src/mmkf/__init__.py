"""Multi-model ensemble Kalman filtering on Lorenz96-family twin experiments."""
from .exceptions import (
    ConfigParseError,
    ConfigurationError,
    DivergenceError,
    InvalidInputError,
    MisspecificationError,
    MMKFError,
    NumericalBlowupError,
    NumericalError,
)
from .filter import InflationState, Observation, apply_inflation, esrf_analysis
from .error_estimation import ModelErrorState
from .metrics import crps_mean, crps_univariate, rmse
from .multimodel import (
    GaussianSummary,
    MultiModelState,
    blue_weights,
    combine_iterative,
    direct_fusion,
    mm_enkf_step_method1,
    mm_enkf_step_method2,
    mm_forecast,
    recursive_forecast,
)

__all__ = [
    "ConfigParseError", "ConfigurationError", "DivergenceError", "InvalidInputError",
    "MisspecificationError", "MMKFError", "NumericalBlowupError", "NumericalError",
    "InflationState", "Observation", "apply_inflation", "esrf_analysis", "ModelErrorState",
    "crps_mean", "crps_univariate", "rmse", "GaussianSummary", "MultiModelState", "blue_weights",
    "combine_iterative", "direct_fusion", "mm_enkf_step_method1", "mm_enkf_step_method2",
    "mm_forecast", "recursive_forecast",
]

__version__ = "0.1.0"
