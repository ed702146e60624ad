"""Per-realization operation counts of the three estimators (additions, multiplications, exp, log)."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..models import OpCounter, PortfolioSpec, ShiftedLognormalAsset, draw_chunk

METHODS = ("MC", "IS", "MCMC")


@dataclass(frozen=True)
class OperationCount:
    """``var``: work per realization for the VaR estimate (``None`` for MCMC, which takes VaR as input).
    ``alloc``: work per realization that feeds the allocation."""

    method: str
    var: Fraction | None
    alloc: Fraction


def count_operations(method: str, n: int, b: int | None = None) -> OperationCount:
    """Analytic counts: MC ``3n`` and ``3n/(2b+1)``; IS ``6n`` and ``6n/(2b+1)``; MCMC ``9`` per step."""
    if method == "MC":
        return OperationCount("MC", Fraction(3 * n), Fraction(3 * n, 2 * _band(b) + 1))
    if method == "IS":
        return OperationCount("IS", Fraction(6 * n), Fraction(6 * n, 2 * _band(b) + 1))
    if method == "MCMC":
        return OperationCount("MCMC", None, Fraction(9))
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _band(b):
    if b is None or b < 0:
        raise ValueError("band half-width required")
    return b


def instrumented_sampling_ops(n: int, rows: int = 1024, shift: float | None = None, seed: int = 0) -> float:
    """Operations per realization actually executed by the sampling loop on a unit-weight lognormal portfolio."""
    spec = PortfolioSpec(tuple([ShiftedLognormalAsset(2.0, 0.45, 0.5)] * n))
    ctr = OpCounter()
    draw_chunk(spec, seed, 0, rows, shift, None, ctr)
    return ctr.total / rows


def instrumented_mcmc_ops(n: int = 10, steps: int = 20_000, ratio_mode: str = "jacobian", seed: int = 0) -> float:
    """Operations per chain step counted inside the MCMC kernel."""
    from .mcmc import MCMCConfig, run_chain

    spec = PortfolioSpec(tuple([ShiftedLognormalAsset(2.0, 0.45, 0.5)] * n))
    cfg = MCMCConfig(m=max(steps // n, 1), var_level=0.5 * n, ratio_mode=ratio_mode, burn_in=0)
    res = run_chain(spec, cfg, seed)
    return float(res.ops.sum() / res.total_steps)
