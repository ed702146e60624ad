"""Metropolis-Hastings on the level set ``{X = -VaR}`` for shifted-lognormal portfolios.

State: the loss exponentials ``e_i = exp(Y_i) = a_i - X_i``.  A move redraws
``Y_k2`` from a Gaussian AR(1) proposal and lets asset ``k1`` absorb the
change so that ``e_k1 + e_k2`` (hence the portfolio total) is unchanged.
Then ``k1`` takes the value of ``k2``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from ..allocation import AllocationReport, grouped_spread
from ..errors import ConfigError, NumericalError
from ..models import PortfolioSpec

RATIO_MODES = ("jacobian", "literal")
STUCK_WINDOW = 10_000
_BLOCK = 1 << 20


@dataclass(frozen=True)
class MCMCConfig:
    """Chain settings.  ``thin`` and ``burn_in`` default to ``n`` and ``10 n`` steps."""

    m: int
    var_level: float
    thin: int | None = None
    rho_prop: float = 0.3
    burn_in: int | None = None
    ratio_mode: str = "jacobian"
    chains: int = 1
    trace_asset: int = 0
    max_lag: int = 10
    n_batches: int = 20

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be positive")
        if not 0 <= self.rho_prop < 1:
            raise ConfigError("rho_prop must lie in [0, 1)")
        if not math.isfinite(self.var_level):
            raise ConfigError("var_level must be finite")
        if self.ratio_mode not in RATIO_MODES:
            raise ConfigError(f"ratio_mode must be one of {RATIO_MODES}")
        if self.chains < 1:
            raise ConfigError("chains must be positive")


@nb.njit(cache=True, nogil=True)
def _run_block(e, dy, k1, mu, sd, inv2var, rho, ks, zs, es, jacobian, thin, t0,
               keep_from, out, out_step, out_acc, out_k1, out_k2, state, ops):
    """Advance the chain over one block of pre-drawn variates.

    ``state`` holds (accepted, consecutive rejections, stuck flag, retained count).
    ``ops`` tallies add, mul, exp, log of the executed path.
    """
    n = e.shape[0]
    steps = ks.shape[0]
    for t in range(steps):
        k2 = ks[t]
        if k2 >= k1:
            k2 += 1
        # AR(1) proposal on Y_k2, stored as deviation from its mean
        dyt2 = rho * dy[k2] + sd[k2] * zs[t]
        et2 = math.exp(mu[k2] + dyt2)
        et1 = e[k1] + e[k2] - et2
        ops[0] += 4
        ops[1] += 2
        ops[2] += 1
        acc = False
        if et1 > 0.0:
            dyt1 = math.log(et1) - mu[k1]
            lr = (dy[k1] * dy[k1] - dyt1 * dyt1) * inv2var[k1]
            ops[0] += 2
            ops[1] += 3
            ops[3] += 1
            if jacobian:
                # log((a - X)/(a - X~)) = Y - Y~
                lr += dy[k1] - dyt1
                ops[0] += 2
            if es[t] > -lr:
                e[k1] = et1
                e[k2] = et2
                dy[k1] = dyt1
                dy[k2] = dyt2
                acc = True
        if acc:
            state[0] += 1
            state[1] = 0
        else:
            state[1] += 1
            if state[1] >= 10_000:
                state[2] = 1
                return k1
        moved = k1
        k1 = k2
        step = t0 + t + 1
        if step > keep_from and (step - keep_from) % thin == 0:
            r = state[3]
            if r < out.shape[0]:
                for i in range(n):
                    out[r, i] = e[i]
                out_step[r] = step
                out_acc[r] = 1 if acc else 0
                out_k1[r] = moved
                out_k2[r] = k2
                state[3] = r + 1
    return k1


@dataclass
class ChainResult:
    samples: np.ndarray        # retained X, shape (m, n)
    steps: np.ndarray
    accepted_flags: np.ndarray
    k1: np.ndarray             # the two assets touched by the step that produced each retained state
    k2: np.ndarray
    acceptance: float
    ops: np.ndarray
    total_steps: int


def level_set_start(a: np.ndarray, mu: np.ndarray, var_level: float) -> np.ndarray:
    """Common shift ``c`` of all ``Y_i = mu_i + c`` putting the total at ``-var_level``; returns ``e_i``.

    Solved by bisection on the monotone total to 1e-10 in ``c``.
    """
    need = a.sum() + var_level      # sum_i exp(mu_i + c) must equal this
    if not need > 0:
        raise NumericalError(f"no state reaches total {-var_level}: the total is bounded by {a.sum()}")
    em = np.exp(mu)
    lo, hi = -1.0, 1.0
    while em.sum() * math.exp(lo) > need:
        lo *= 2
    while em.sum() * math.exp(hi) < need:
        hi *= 2
    while hi - lo > 1e-10:
        c = 0.5 * (lo + hi)
        if em.sum() * math.exp(c) < need:
            lo = c
        else:
            hi = c
    e = np.exp(mu + 0.5 * (lo + hi))
    # absorb the bisection residual so the start lies on the level set to rounding
    e *= need / e.sum()
    return e


def _lognormal_arrays(spec: PortfolioSpec):
    if not spec.all_lognormal:
        raise ConfigError("MCMC requires shifted-lognormal assets")
    a, mu, s = spec.lognormal_params()
    u = spec.weights
    if np.any(u <= 0):
        raise ConfigError("MCMC needs strictly positive weights")
    # u (a - e^Y) = u a - e^{Y + log u}
    return a * u, mu + np.log(u), s


def run_chain(spec: PortfolioSpec, cfg: MCMCConfig, seed: int, chain: int = 0) -> ChainResult:
    """One chain: burn-in, then ``m`` states retained every ``thin`` steps."""
    a, mu, s = _lognormal_arrays(spec)
    n = a.size
    if n < 2:
        raise ConfigError("MCMC needs at least two assets")
    thin = n if cfg.thin is None else cfg.thin
    burn = 10 * n if cfg.burn_in is None else cfg.burn_in
    total_steps = burn + cfg.m * thin
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chain,))))
    e = level_set_start(a, mu, cfg.var_level)
    dy = np.log(e) - mu
    sd = math.sqrt(1 - cfg.rho_prop ** 2) * s
    inv2var = 1.0 / (2 * s * s)
    out = np.empty((cfg.m, n))
    out_step = np.empty(cfg.m, np.int64)
    out_acc = np.empty(cfg.m, np.int8)
    out_k1 = np.empty(cfg.m, np.int64)
    out_k2 = np.empty(cfg.m, np.int64)
    state = np.zeros(4, np.int64)
    ops = np.zeros(4, np.int64)
    k1 = int(rng.integers(0, n))
    done = 0
    while done < total_steps:
        nb_ = min(_BLOCK, total_steps - done)
        ks = rng.integers(0, n - 1, nb_)
        zs = rng.standard_normal(nb_)
        es = rng.standard_exponential(nb_)
        k1 = _run_block(e, dy, k1, mu, sd, inv2var, cfg.rho_prop, ks, zs, es, cfg.ratio_mode == "jacobian",
                        thin, done, burn, out, out_step, out_acc, out_k1, out_k2, state, ops)
        if state[2]:
            raise NumericalError(f"chain stuck: no move accepted in {STUCK_WINDOW} consecutive steps")
        done += nb_
    x = a - out
    return ChainResult(x, out_step, out_acc, out_k1, out_k2, state[0] / total_steps, ops, total_steps)


def autocorrelation(x: np.ndarray, max_lag: int = 10) -> np.ndarray:
    """Sample autocorrelation at lags ``1..max_lag``."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    d = float(x @ x)
    if d == 0:
        return np.zeros(max_lag)
    return np.array([float(x[:-k] @ x[k:]) / d for k in range(1, max_lag + 1)])


def batch_means_stderr(samples: np.ndarray, k: int) -> np.ndarray:
    blocks = np.array_split(samples, k)
    means = np.array([b.mean(axis=0) for b in blocks])
    return means.std(axis=0, ddof=1) / math.sqrt(k)


def write_trace_csv(result: ChainResult, path, digits: int = 17) -> Path:
    """Retained states as ``step,accepted,total,asset_k1,asset_k2``; ``asset_k*`` are the values of the two assets moved last."""
    path = Path(path)
    fmt = lambda v: format(float(v), f".{digits}g")  # noqa: E731
    x = result.samples
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step", "accepted", "total", "asset_k1", "asset_k2"])
        totals = x.sum(axis=1)
        for r in range(x.shape[0]):
            k1, k2 = int(result.k1[r]), int(result.k2[r])
            wr.writerow([int(result.steps[r]), int(result.accepted_flags[r]), fmt(totals[r]), fmt(x[r, k1]), fmt(x[r, k2])])
    return path


@dataclass
class MCMCRun:
    report: AllocationReport
    chains: list = field(default_factory=list)


def estimate_mcmc(spec: PortfolioSpec, cfg: MCMCConfig, seed: int, threads: int | None = None,
                  keep_chains: bool = False):
    """Allocations ``-(1/m) sum_j X_i^{(j)}`` from retained level-set states.

    The VaR level is an input.  Multiple chains run on derived seeds and are
    pooled; diagnostics include acceptance, autocorrelation of one asset's
    retained trace and the between-chain spread.
    """
    threads = 1 if threads is None else threads
    if cfg.chains > 1 and threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, cfg.chains)) as pool:
            results = list(pool.map(lambda c: run_chain(spec, cfg, seed, c), range(cfg.chains)))
    else:
        results = [run_chain(spec, cfg, seed, c) for c in range(cfg.chains)]
    pooled = np.concatenate([r.samples for r in results])
    alloc = -pooled.mean(axis=0) + 0.0
    groups = None if spec.groups is None else np.asarray(spec.groups)
    bm = batch_means_stderr(pooled, cfg.n_batches)
    if groups is not None and len(set(spec.groups)) < spec.n:
        stderr = grouped_spread(alloc, groups)
        mode = "grouped"
    else:
        stderr = bm
        mode = "batch-means"
    acf = autocorrelation(results[0].samples[:, cfg.trace_asset], cfg.max_lag)
    totals = pooled.sum(axis=1)
    rel = np.abs(totals + cfg.var_level) / max(1.0, abs(cfg.var_level))
    ops = sum(r.ops for r in results)
    steps = sum(r.total_steps for r in results)
    from .operations import count_operations

    diag = {
        "m": cfg.m, "chains": cfg.chains, "seed": seed, "ratio_mode": cfg.ratio_mode, "rho_prop": cfg.rho_prop,
        "thin": spec.n if cfg.thin is None else cfg.thin,
        "burn_in": 10 * spec.n if cfg.burn_in is None else cfg.burn_in,
        "acceptance": float(np.mean([r.acceptance for r in results])),
        "stderr_mode": mode,
        "max_level_deviation": float(rel.max()),
        "ops_alloc_analytic": float(count_operations("MCMC", spec.n).alloc),
        "ops_alloc_instrumented": float(ops.sum() / steps),
    }
    for k, v in enumerate(acf, start=1):
        diag[f"acf_lag{k}"] = float(v)
    diag["op_counts"] = dict(zip(("add", "mul", "exp", "log"), (int(v) for v in ops)))
    diag["batch_means_stderr"] = bm
    if cfg.chains > 1:
        means = np.array([-r.samples.mean(axis=0) for r in results])
        diag["between_chain_sd"] = means.std(axis=0, ddof=1)
    report = AllocationReport(cfg.var_level, alloc, stderr, spec.expected_returns(), "MCMC", "VaR", groups, diag)
    if keep_chains:
        return MCMCRun(report, results)
    return report
