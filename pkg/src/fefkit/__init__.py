"""Data-driven fault estimation filters built from identified Markov parameters."""
from .errors import (DesignFailed, DimensionError, DivergenceError, FefError,
                     IllConditionedRegression, NoStabilizingSolution, NumericFailure,
                     RealizationDegenerate, SimulationOverflow)
from .filtering import FefFilter, load_filter, save_filter
from .gain import check_existence, design_gain, select_alpha, solve_dare
from .identify import VarxModel, extract_mps, fit_varx, suggest_varx_order
from .markov import FaultChannel, MarkovSequence, fef_markov, parse_faults
from .realize import (FefRealization, build_hankel, fef_from_predictor, ho_kalman,
                      realize_pipeline, suggest_order, truncated_svd)
from .sysmodel import (ContinuousModel, OutputFeedback, PredictorModel, StateSpaceModel,
                       TimeSeries, simulate, to_predictor, zoh_discretize)

__version__ = "0.1.0"

__all__ = [
    "DesignFailed", "DimensionError", "DivergenceError", "FefError", "IllConditionedRegression",
    "NoStabilizingSolution", "NumericFailure", "RealizationDegenerate", "SimulationOverflow",
    "FefFilter", "load_filter", "save_filter",
    "check_existence", "design_gain", "select_alpha", "solve_dare",
    "VarxModel", "extract_mps", "fit_varx", "suggest_varx_order",
    "FaultChannel", "MarkovSequence", "fef_markov", "parse_faults",
    "FefRealization", "build_hankel", "fef_from_predictor", "ho_kalman", "realize_pipeline",
    "suggest_order", "truncated_svd",
    "ContinuousModel", "OutputFeedback", "PredictorModel", "StateSpaceModel", "TimeSeries",
    "simulate", "to_predictor", "zoh_discretize",
]
