"""Plain Monte Carlo VaR and band allocation, plus the two-pass sampling engine shared with IS.

A million realizations of a 90-asset portfolio do not fit comfortably in
memory, so the engine runs in two passes over the deterministic chunk
streams: the first keeps only totals (and log-weights), the second
regenerates the chunks and keeps the components of the handful of rows the
band estimators actually read.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..allocation import AllocationReport, alloc_var_band, grouped_spread
from ..empirical import RealizationBatch, SortedBatch, _weighted_level, level_index
from ..errors import ConfigError
from ..models import OpCounter, PortfolioSpec, chunk_bounds, draw_chunk, map_chunks


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class MCConfig:
    """Realization count ``m``, band half-width ``b`` and level ``alpha``."""

    m: int
    b: int
    alpha: float = 0.99
    variant: str = "ratio"
    stderr: str = "auto"
    n_batches: int = 10

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.b < 0 or self.m < 2 * self.b + 1:
            raise ConfigError(f"need m >= 2b+1 >= 1, got m={self.m}, b={self.b}")
        k = level_index(self.alpha, self.m)
        if k - self.b < 0 or k + self.b >= self.m:
            raise ConfigError(f"band [{k - self.b}, {k + self.b}] falls outside [0, {self.m})")
        if self.stderr not in ("auto", "grouped", "batches", "none"):
            raise ConfigError(f"unknown stderr mode {self.stderr!r}")


@dataclass
class Pass1:
    totals: np.ndarray
    logw: np.ndarray | None
    counter: OpCounter


def first_pass(spec: PortfolioSpec, m: int, seed: int, threads: int, shift=None, sigma_is=None) -> Pass1:
    """Totals (and IS log-weights) of all ``m`` rows with an operation tally of the sampling loop."""
    totals = np.empty(m)
    logw = None if shift is None and sigma_is is None else np.empty(m)
    counters = []

    def work(c, s, e):
        ctr = OpCounter()
        _, t, lw = draw_chunk(spec, seed, c, e - s, shift, sigma_is, ctr)
        totals[s:e] = t
        if logw is not None:
            logw[s:e] = lw
        return ctr

    counters = map_chunks(work, m, threads)
    total = OpCounter()
    for c in counters:
        total.merge(c)
    return Pass1(totals, logw, total)


def gather_rows(spec: PortfolioSpec, m: int, seed: int, rows: np.ndarray, threads: int,
                shift=None, sigma_is=None) -> dict[int, np.ndarray]:
    """Regenerate only the chunks holding ``rows`` and return ``{row: components}``."""
    rows = np.unique(np.asarray(rows, dtype=np.int64))
    bounds = chunk_bounds(m)
    wanted: dict[int, np.ndarray] = {}
    starts = np.array([s for s, _ in bounds])
    chunk_of = np.searchsorted(starts, rows, side="right") - 1
    for c in np.unique(chunk_of):
        wanted[int(c)] = rows[chunk_of == c]
    out: dict[int, np.ndarray] = {}
    jobs = sorted(wanted)

    def work(c):
        s, e = bounds[c]
        comps, _, _ = draw_chunk(spec, seed, c, e - s, shift, sigma_is)
        r = wanted[c]
        return r, comps[r - s]

    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(c) for c in jobs]
    for r, comps in results:
        for j, row in enumerate(r):
            out[int(row)] = comps[j]
    return out


@dataclass(frozen=True)
class BandPlan:
    """Where the VaR order statistic sits in one (sub-)batch and which rows form its band."""

    rows: np.ndarray          # original row ids of the band, ascending by total
    level_pos: int            # position of the VaR row inside ``rows``
    weights: np.ndarray | None
    var: float


def plan_band(totals: np.ndarray, ids: np.ndarray, alpha: float, b: int, weights: np.ndarray | None) -> BandPlan:
    """Sort one batch, locate the (weighted) VaR position and pick its ``2b+1`` neighbours."""
    order = np.argsort(totals, kind="stable")
    m = totals.size
    if weights is None:
        k = level_index(alpha, m)
    else:
        k = _weighted_level(weights[order], alpha)
    if k - b < 0 or k + b >= m:
        raise ConfigError(f"band half-width {b} does not fit around position {k} of {m}")
    sel = order[k - b:k + b + 1]
    w = None if weights is None else weights[sel]
    return BandPlan(ids[sel], b, w, float(-totals[order[k]]))


def band_allocation(plan: BandPlan, comps: dict[int, np.ndarray], totals: np.ndarray, alpha: float,
                    variant: str, weighted: bool = True) -> np.ndarray:
    rows = plan.rows
    c = np.stack([comps[int(r)] for r in rows])
    batch = RealizationBatch(c, totals[rows], plan.weights)
    sb = SortedBatch(batch, np.arange(rows.size), plan.level_pos, alpha)
    return alloc_var_band(sb, plan.level_pos, variant, weighted)


def split_ids(m: int, k: int) -> list[np.ndarray]:
    """Contiguous, nearly equal row blocks used for batch-splitting standard errors."""
    edges = np.linspace(0, m, k + 1).round().astype(np.int64)
    return [np.arange(edges[i], edges[i + 1]) for i in range(k)]


def resolve_stderr_mode(mode: str, spec: PortfolioSpec) -> str:
    if mode != "auto":
        return mode
    if spec.groups is not None and len(set(spec.groups)) < spec.n:
        return "grouped"
    return "batches"


def band_estimate(spec: PortfolioSpec, m: int, b: int, alpha: float, seed: int, threads: int, variant: str,
                  stderr_mode: str, n_batches: int, shift=None, sigma_is=None, weighted: bool = True,
                  weights_from_logw=None):
    """Shared body of the MC and IS estimators.

    Returns ``(var, allocations, stderr, diagnostics, pass1)``.
    """
    p1 = first_pass(spec, m, seed, threads, shift, sigma_is)
    weights = None if weights_from_logw is None else weights_from_logw(p1.logw)
    ids = np.arange(m)
    main = plan_band(p1.totals, ids, alpha, b, weights)
    plans = [main]
    mode = resolve_stderr_mode(stderr_mode, spec)
    b_sub = None
    if mode == "batches":
        b_sub = max(int(round(b / n_batches)), 0)
        for blk in split_ids(m, n_batches):
            wb = None if weights is None else weights[blk]
            plans.append(plan_band(p1.totals[blk], blk, alpha, b_sub, wb))
    needed = np.concatenate([p.rows for p in plans])
    comps = gather_rows(spec, m, seed, needed, threads, shift, sigma_is)
    alloc = band_allocation(main, comps, p1.totals, alpha, variant, weighted)
    diag: dict = {"stderr_mode": mode, "band_rows": int(main.rows.size)}
    if mode == "grouped":
        stderr = grouped_spread(alloc, spec.groups)
    elif mode == "batches":
        subs = np.array([band_allocation(p, comps, p1.totals, alpha, variant, weighted) for p in plans[1:]])
        sub_var = np.array([p.var for p in plans[1:]])
        stderr = subs.std(axis=0, ddof=1) / math.sqrt(n_batches)
        diag["var_stderr"] = float(sub_var.std(ddof=1) / math.sqrt(n_batches))
        diag["sub_band_half_width"] = b_sub
    else:
        stderr = np.full(spec.n, np.nan)
    return main.var, alloc, stderr, diag, p1


def estimate_mc(spec: PortfolioSpec, cfg: MCConfig, seed: int, threads: int | None = None) -> AllocationReport:
    """Monte Carlo VaR (``-X_(n_alpha)``) and band Euler allocation."""
    threads = default_threads() if threads is None else threads
    var, alloc, stderr, diag, p1 = band_estimate(spec, cfg.m, cfg.b, cfg.alpha, seed, threads, cfg.variant,
                                                 cfg.stderr, cfg.n_batches)
    from .operations import count_operations

    ops = count_operations("MC", spec.n, cfg.b)
    per_row = p1.counter.total / cfg.m
    diag.update({
        "m": cfg.m, "b": cfg.b, "alpha": cfg.alpha, "seed": seed,
        "ops_var_analytic": float(ops.var), "ops_alloc_analytic": float(ops.alloc),
        "ops_var_instrumented": per_row, "ops_alloc_instrumented": per_row / (2 * cfg.b + 1),
    })
    diag["op_counts"] = dict(p1.counter.counts)
    return AllocationReport(var, alloc, stderr, spec.expected_returns(), "MC", f"VaR_{cfg.alpha:g}",
                            None if spec.groups is None else np.asarray(spec.groups), diag)
