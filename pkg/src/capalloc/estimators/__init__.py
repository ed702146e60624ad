"""Simulation estimators: Monte Carlo, importance sampling and level-set MCMC."""

from .importance import ISConfig, estimate_is
from .mcmc import MCMCConfig, autocorrelation, estimate_mcmc, run_chain, write_trace_csv
from .montecarlo import MCConfig, estimate_mc
from .operations import OperationCount, count_operations, instrumented_mcmc_ops, instrumented_sampling_ops

__all__ = [
    "MCConfig", "ISConfig", "MCMCConfig", "estimate_mc", "estimate_is", "estimate_mcmc", "run_chain",
    "autocorrelation", "write_trace_csv", "OperationCount", "count_operations",
    "instrumented_sampling_ops", "instrumented_mcmc_ops",
]
