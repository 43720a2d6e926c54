"""ARX hidden Markov models with arbitrary emission distributions,
randomized-PIT goodness-of-fit tests, and regime selection."""

__version__ = "0.1.0"

from .emissions import (
    EmissionFamily,
    EmissionParams,
    Predictor,
    GAUSSIAN_FAMILY,
    POISSON_LOG,
    POISSON_LINEAR,
    ZERO_FAMILY,
)
from .model import FilterSmoother, HmmModel, SeriesData, forward_filter, smooth
from .em import EmConfig, FitResult, em_fit
from .gof import GofReport, PseudoObs, bootstrap_pvalue, cvm_statistic, ks_statistic
from .criteria import CriteriaRow, information_criteria, select_by_gof, select_by_ic
from .dgp import DgpSpec, builtin_model, simulate, simulate_dgp

__all__ = [
    "EmissionFamily",
    "EmissionParams",
    "Predictor",
    "GAUSSIAN_FAMILY",
    "POISSON_LOG",
    "POISSON_LINEAR",
    "ZERO_FAMILY",
    "FilterSmoother",
    "HmmModel",
    "SeriesData",
    "forward_filter",
    "smooth",
    "EmConfig",
    "FitResult",
    "em_fit",
    "GofReport",
    "PseudoObs",
    "bootstrap_pvalue",
    "cvm_statistic",
    "ks_statistic",
    "CriteriaRow",
    "information_criteria",
    "select_by_gof",
    "select_by_ic",
    "DgpSpec",
    "builtin_model",
    "simulate",
    "simulate_dgp",
]
