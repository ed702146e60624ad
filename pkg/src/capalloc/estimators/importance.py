"""Importance sampling with a mean-shifted Gaussian proposal on the log-loss drivers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..allocation import AllocationReport
from ..empirical import effective_sample_size, level_index
from ..errors import ConfigError, NumericalError
from ..models import PortfolioSpec
from .montecarlo import band_estimate, default_threads


@dataclass(frozen=True)
class ISConfig:
    """Proposal ``Y_i ~ N(mu_i + shift_i, sigma_is_i^2)``; ``sigma_is=None`` keeps the target scale.

    ``weighted_band=False`` averages the band members without their
    likelihood ratios.  ``hit_halfwidth`` sets the fixed window around VaR
    used for the band-hit diagnostic.
    """

    m: int
    b_is: int
    alpha: float = 0.99
    shift: float | tuple = 0.2
    sigma_is: float | tuple | None = None
    variant: str = "ratio"
    weighted_band: bool = True
    stderr: str = "auto"
    n_batches: int = 10
    min_ess: float = 10.0
    hit_halfwidth: float = 0.05

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.b_is < 0 or self.m < 2 * self.b_is + 1:
            raise ConfigError(f"need m >= 2b_is+1 >= 1, got m={self.m}, b_is={self.b_is}")
        if self.sigma_is is not None and np.any(np.asarray(self.sigma_is, dtype=float) <= 0):
            raise ConfigError("proposal scale must be positive")


def _weights(logw: np.ndarray) -> np.ndarray | None:
    # a zero shift yields log-weights of exactly zero: keep the unweighted path
    if not np.any(logw):
        return None
    return np.exp(logw - logw.max())


def estimate_is(spec: PortfolioSpec, cfg: ISConfig, seed: int, threads: int | None = None) -> AllocationReport:
    """Likelihood-ratio weighted VaR and band allocation.

    Raises :class:`NumericalError` when the effective sample size falls below
    ``cfg.min_ess``.
    """
    if not spec.all_lognormal:
        raise ConfigError("importance sampling requires shifted-lognormal assets")
    threads = default_threads() if threads is None else threads
    weights_seen = {}

    def make_weights(logw):
        w = _weights(logw)
        ess = float(logw.size) if w is None else effective_sample_size(w)
        weights_seen["w"], weights_seen["ess"] = w, ess
        if ess < cfg.min_ess:
            raise NumericalError(f"importance weights degenerate (ESS {ess:.1f} < {cfg.min_ess:g}); use a smaller shift")
        return w

    var, alloc, stderr, diag, p1 = band_estimate(
        spec, cfg.m, cfg.b_is, cfg.alpha, seed, threads, cfg.variant, cfg.stderr, cfg.n_batches,
        shift=cfg.shift, sigma_is=cfg.sigma_is, weighted=cfg.weighted_band, weights_from_logw=make_weights)
    w = weights_seen["w"]
    t = p1.totals
    window = np.abs(t + var) <= cfg.hit_halfwidth
    hits = int(window.sum())
    # probability of the window under the target law, estimated from the same weights
    target_prob = float(window.mean()) if w is None else float(w[window].sum() / w.sum())
    from .operations import count_operations

    ops = count_operations("IS", spec.n, cfg.b_is)
    per_row = p1.counter.total / cfg.m
    diag.update({
        "m": cfg.m, "b_is": cfg.b_is, "alpha": cfg.alpha, "seed": seed,
        "ess": weights_seen["ess"],
        "band_hits": hits,
        "band_hit_fraction": hits / cfg.m,
        "band_target_probability": target_prob,
        "band_hit_ratio": (hits / cfg.m) / target_prob if target_prob > 0 else float("nan"),
        "mc_level_index": level_index(cfg.alpha, cfg.m),
        "ops_var_analytic": float(ops.var), "ops_alloc_analytic": float(ops.alloc),
        "ops_var_instrumented": per_row, "ops_alloc_instrumented": per_row / (2 * cfg.b_is + 1),
    })
    diag["op_counts"] = dict(p1.counter.counts)
    return AllocationReport(var, alloc, stderr, spec.expected_returns(), "IS", f"VaR_{cfg.alpha:g}",
                            None if spec.groups is None else np.asarray(spec.groups), diag)
