"""Multicalibration-style debiasing and ensembling of predictors for linear downstream objectives."""

from . import _backend
from .blackbox import OpaquePolicy, conditional_dominance_report, run_blackbox
from .core import (AllPoints, ArgmaxRegion, Bucketing, ConditioningEvent, Dataset, EventFamily, Intersection,
                   PatchedModel, PolicyLevelSet, make_bucketing, predict)
from .debias import check_consistency, find_violation, apply_patch, update
from .errors import (ConfigError, EnsembleError, InvariantViolation, NumericalError, ReplayContextError,
                     StaleReportError)
from .oracle import CovarianceConstrained, LinearCapped, solve, solve_batch
from .whitebox import ensemble_act, ensemble_metrics, run_whitebox

__version__ = "0.1.0"
backend = _backend.name

__all__ = [
    "AllPoints", "ArgmaxRegion", "Bucketing", "ConditioningEvent", "ConfigError", "CovarianceConstrained",
    "Dataset", "EnsembleError", "EventFamily", "Intersection", "InvariantViolation", "LinearCapped",
    "NumericalError", "OpaquePolicy", "PatchedModel", "PolicyLevelSet", "ReplayContextError",
    "StaleReportError", "apply_patch", "backend", "check_consistency", "conditional_dominance_report",
    "ensemble_act", "ensemble_metrics", "find_violation", "make_bucketing", "predict", "run_blackbox",
    "run_whitebox", "solve", "solve_batch", "update",
]
