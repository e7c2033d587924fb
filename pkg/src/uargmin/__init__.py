"""Minimisers of convex U-processes: estimation, limit laws and Monte Carlo checks."""

from .asymptotics import (
    AsymptoticReport, AttractionClass, LimitLaw, PopulationProblem, analyze, classify, delta_n,
    find_m, normalizing_sequence, population_V, zeta,
)
from .errors import (
    AnalysisError, ConfigError, EnumerationCapError, NonCoerciveLossError, ReplicationError,
    UArgminError,
)
from .estimator import argmin_interval, kernel_sample
from .montecarlo import SimConfig, run
from .population import builtin, piecewise_cdf, smirnov_cdf
from .problem import custom_loss, kernel_catalog, loss_catalog, step_loss

__all__ = [
    "AnalysisError", "AsymptoticReport", "AttractionClass", "ConfigError", "EnumerationCapError",
    "LimitLaw", "NonCoerciveLossError", "PopulationProblem", "ReplicationError", "SimConfig",
    "UArgminError", "analyze", "argmin_interval", "builtin", "classify", "custom_loss", "delta_n",
    "find_m", "kernel_catalog", "kernel_sample", "loss_catalog", "normalizing_sequence",
    "piecewise_cdf", "population_V", "run", "smirnov_cdf", "step_loss", "zeta",
]
