"""Mean-shift changepoint detection for seasonal, autocorrelated series.

Configurations are scored by a Bayesian minimum description length (BMDL)
that integrates regime means out and can favour documented change times;
a Metropolis-Hastings search finds the lowest-scoring configuration.
"""
from . import kernels
from .bivariate import bivariate_bmdl_score, bivariate_fit_params, bivariate_prior_code_length
from .errors import (
    BMDLError,
    DegenerateDesign,
    DimensionMismatch,
    Duplicate,
    EmptyModel,
    GapError,
    NonStationary,
    OutOfRange,
    ParseError,
    RangeError,
    SearchFailed,
    SingularMatrix,
)
from .io import ingest
from .model import (
    ChangepointConfig,
    FittedParams,
    Hyperparams,
    Metadata,
    SeriesData,
    classify_counts,
    config_from_times,
    regime_partition,
    times_of,
)
from .search import FitResult, Scorer, SearchOptions, fit
from .simulate import DetectionTable, Scenario, load_scenario, run_study, simulate_series
from .univariate import (
    ScoreBreakdown,
    bic_score,
    bmdl_score,
    fit_params,
    mdl_score,
    prior_code_length,
)

__version__ = "0.1.0"
