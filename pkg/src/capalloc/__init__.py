"""Euler capital allocation with VaR and Expected Shortfall.

Exact enumeration on discrete laws, Monte Carlo, importance sampling and
level-set MCMC estimators, RORAC tools and a scenario-driven CLI.
"""

from .allocation import AllocationReport, alloc_blend_var_es, alloc_es_tail, alloc_var_band, rorac
from .discrete import DiscreteJointDistribution, es_exact, euler_alloc_es_exact, euler_alloc_var_exact, var_exact
from .empirical import RealizationBatch, SortedBatch, empirical_quantile, sort_batch, weighted_quantile
from .errors import AllocationError, ConfigError, NumericalError
from .measures import RiskMeasure, check_axiom, es_empirical, var_empirical

__version__ = "0.1.0"

__all__ = [
    "AllocationReport", "alloc_blend_var_es", "alloc_es_tail", "alloc_var_band", "rorac",
    "DiscreteJointDistribution", "es_exact", "euler_alloc_es_exact", "euler_alloc_var_exact", "var_exact",
    "RealizationBatch", "SortedBatch", "empirical_quantile", "sort_batch", "weighted_quantile",
    "AllocationError", "ConfigError", "NumericalError",
    "RiskMeasure", "check_axiom", "es_empirical", "var_empirical",
]
