"""Euler allocation estimators on batches, the VaR/ES blend, RORAC and compatibility checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .empirical import SortedBatch
from .errors import NumericalError
from .measures import _tail_rows


def _fmt(x, digits: int = 17) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, f".{digits}g")


@dataclass
class AllocationReport:
    """Portfolio risk, per-asset Euler capital and the derived RORACs.

    ``groups`` labels identically distributed assets; the group summary
    averages allocations within each label and reports their spread.
    """

    risk: float
    allocations: np.ndarray
    stderr: np.ndarray
    expected_returns: np.ndarray
    method: str
    measure: str = "VaR"
    groups: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    roracs: np.ndarray = field(init=False)
    portfolio_rorac: float = field(init=False)
    negative: np.ndarray = field(init=False)

    def __post_init__(self):
        self.allocations = np.asarray(self.allocations, dtype=float)
        n = self.allocations.size
        self.stderr = np.broadcast_to(np.asarray(self.stderr, dtype=float), (n,)).copy()
        self.expected_returns = np.broadcast_to(np.asarray(self.expected_returns, dtype=float), (n,)).copy()
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
        res = rorac(self.expected_returns, self.allocations, float(self.expected_returns.sum()), self.risk)
        self.roracs, self.portfolio_rorac, self.negative = res

    @property
    def n(self) -> int:
        return self.allocations.size

    @property
    def var_or_es(self) -> float:
        return self.risk

    def full_allocation_gap(self) -> float:
        return float(self.allocations.sum() - self.risk)

    def group_summary(self) -> list[dict]:
        """Mean allocation, spread across members and mean stderr for each group label."""
        labels = self.groups if self.groups is not None else np.arange(self.n)
        out = []
        for g in dict.fromkeys(labels.tolist()):
            sel = labels == g
            a = self.allocations[sel]
            out.append({
                "group": g,
                "size": int(sel.sum()),
                "allocation": float(a.mean()),
                "spread": float(a.std(ddof=1)) if a.size > 1 else float("nan"),
                "stderr": float(self.stderr[sel].mean()),
                "expected_return": float(self.expected_returns[sel].mean()),
                "rorac": float(self.roracs[sel].mean()),
            })
        return out

    def summary(self) -> dict:
        return {
            "method": self.method,
            "measure": self.measure,
            "risk": self.risk,
            "portfolio_return": float(self.expected_returns.sum()),
            "portfolio_rorac": self.portfolio_rorac,
            "allocation_sum": float(self.allocations.sum()),
            "diagnostics": {k: v for k, v in self.diagnostics.items() if np.isscalar(v)},
        }

    def to_csv(self, path, digits: int = 17) -> Path:
        """One row per asset: ``asset,group,expected_return,allocation,stderr,rorac,negative``."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["asset", "group", "expected_return", "allocation", "stderr", "rorac", "negative"])
            for i in range(self.n):
                g = "" if self.groups is None else self.groups[i]
                wr.writerow([i + 1, g, _fmt(self.expected_returns[i], digits), _fmt(self.allocations[i], digits),
                             _fmt(self.stderr[i], digits), _fmt(self.roracs[i], digits), int(self.negative[i])])
        return path

    def to_text(self, digits: int = 4) -> str:
        lines = [
            f"method            {self.method}",
            f"measure           {self.measure}",
            f"portfolio risk    {self.risk:.{digits}f}",
            f"portfolio return  {self.expected_returns.sum():.{digits}f}",
            f"portfolio RORAC   {self.portfolio_rorac:.{digits}f}",
        ]
        for k, v in self.diagnostics.items():
            if isinstance(v, (int, float, np.floating, np.integer)):
                lines.append(f"{k:<17} {float(v):.{digits}g}")
        rows = self.group_summary() if self.groups is not None else None
        if rows is not None and len(rows) < self.n:
            lines.append("")
            lines.append(f"{'group':>8} {'size':>5} {'alloc':>12} {'spread':>12} {'stderr':>12} {'RORAC':>12}")
            for r in rows:
                lines.append(f"{str(r['group']):>8} {r['size']:>5} {r['allocation']:>12.{digits}f} "
                             f"{r['spread']:>12.{digits}f} {r['stderr']:>12.{digits}f} {r['rorac']:>12.{digits}f}")
        else:
            lines.append("")
            lines.append(f"{'asset':>6} {'E[X_i]':>12} {'alloc':>12} {'stderr':>12} {'RORAC':>12}")
            for i in range(self.n):
                flag = " (neg)" if self.negative[i] else ""
                lines.append(f"{i + 1:>6} {self.expected_returns[i]:>12.{digits}f} {self.allocations[i]:>12.{digits}f} "
                             f"{self.stderr[i]:>12.{digits}f} {self.roracs[i]:>12.{digits}f}{flag}")
        return "\n".join(lines) + "\n"


def band_rows(sorted_batch: SortedBatch, b: int) -> np.ndarray:
    """Original row indices of the ``2b+1`` sorted realizations centred on the VaR position."""
    if b < 0:
        raise ValueError("band half-width must be nonnegative")
    k, m = sorted_batch.level_index, sorted_batch.batch.m
    if k - b < 0 or k + b >= m:
        raise ValueError(f"band out of range: level index {k} with b={b} on {m} realizations")
    return sorted_batch.order[k - b:k + b + 1]


def alloc_var_band(sorted_batch: SortedBatch, b: int, variant: str = "ratio", weighted: bool = True) -> np.ndarray:
    """Band estimator of ``-E[X_i | X = -VaR]``.

    ``variant="ratio"`` rescales every band realization onto the VaR level,
    ``-X_(k) * mean_j(X_(k+j),i / X_(k+j))``, so the allocations add up to the
    VaR estimate exactly.  ``variant="plain"`` is the raw band mean
    ``-mean_j X_(k+j),i``.  On weighted batches the band members are averaged
    with their importance weights unless ``weighted=False``.
    """
    batch = sorted_batch.batch
    rows = band_rows(sorted_batch, b)
    comps = batch.components[rows]
    if batch.weights is not None and weighted:
        w = batch.weights[rows]
        if not w.sum() > 0:
            raise NumericalError("band carries zero weight")
        w = w / w.sum()
    else:
        w = np.full(rows.size, 1.0 / rows.size)
    if variant == "plain":
        return -(w @ comps) + 0.0
    if variant != "ratio":
        raise ValueError(f"unknown band variant {variant!r}")
    totals = batch.totals[rows]
    if np.any(totals == 0):
        raise NumericalError("zero portfolio total inside the band; use variant='plain'")
    level = sorted_batch.level_value
    return -level * (w @ (comps / totals[:, None])) + 0.0


def alloc_es_tail(sorted_batch: SortedBatch, alpha: float | None = None, form: str = "tail") -> np.ndarray:
    """``-E[X_i | X <= -VaR]`` from the worst realizations (weights respected).

    ``form="tail"`` averages the worst ``floor((1-alpha) m)`` rows and sums to
    the tail-form ES; ``form="integral"`` gives the boundary row a fractional
    weight and sums to the integral-form ES.
    """
    alpha = sorted_batch.alpha if alpha is None else alpha
    batch = sorted_batch.batch
    if form == "tail":
        rows, w = _tail_rows(sorted_batch, alpha)
        if rows.size == 0:
            raise NumericalError("empty tail")
        comps = batch.components[rows]
        if w is None:
            return -comps.mean(axis=0) + 0.0
        return -(w @ comps) / w.sum() + 0.0
    if form != "integral":
        raise ValueError(f"unknown ES form {form!r}")
    order = sorted_batch.order
    w = np.ones(batch.m) if batch.weights is None else batch.weights[order] / batch.weights.max()
    mass = (1.0 - alpha) * w.sum()
    hi = np.cumsum(w)
    share = np.clip(np.minimum(hi, mass) - (hi - w), 0.0, None)
    keep = np.flatnonzero(share)
    return -(share[keep] @ batch.components[order[keep]]) / mass + 0.0


def alloc_blend_var_es(es_allocs, es_total: float, var_total: float) -> np.ndarray:
    """ES allocations rescaled to the VaR capital: ``ES_i * VaR / ES``."""
    if es_total == 0:
        raise NumericalError("ES total is zero; blend undefined")
    return np.asarray(es_allocs, dtype=float) * (var_total / es_total)


class RoracResult(NamedTuple):
    asset: np.ndarray
    portfolio: float
    negative: np.ndarray


def rorac(expected_returns, allocations, portfolio_return: float, portfolio_risk: float) -> RoracResult:
    """Per-asset and portfolio return on allocated capital.

    Zero allocations give NaN; negative allocations keep their (sign-flipped)
    ratio and are flagged in ``negative``.
    """
    if portfolio_risk == 0:
        raise NumericalError("portfolio risk is zero; RORAC undefined")
    r = np.asarray(expected_returns, dtype=float)
    a = np.asarray(allocations, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a != 0, r / np.where(a != 0, a, 1.0), np.nan)
    return RoracResult(out, float(portfolio_return / portfolio_risk), a < 0)


def grouped_spread(values, groups) -> np.ndarray:
    """Per-asset standard deviation of ``values`` across the members of its group.

    With exchangeable assets this is the sampling spread of a single-asset
    estimate; singleton groups get NaN.
    """
    values = np.asarray(values, dtype=float)
    groups = np.asarray(groups)
    out = np.full(values.size, np.nan)
    for g in np.unique(groups):
        sel = groups == g
        if sel.sum() > 1:
            out[sel] = values[sel].std(ddof=1)
    return out


@dataclass(frozen=True)
class CompatibilityCheck:
    asset: int
    premise: bool
    passed: bool
    epsilon: float
    asset_rorac: float
    portfolio_rorac: float
    counterexample: dict | None = None


def check_rorac_compatibility(evaluator: Callable[[np.ndarray], AllocationReport], i: int, h_grid: Sequence[float],
                              u0=None, rtol: float = 0.0) -> CompatibilityCheck:
    """Does upweighting an above-average-RORAC asset raise portfolio RORAC?

    ``evaluator(u)`` returns the report of the portfolio ``sum u_j X_j``.
    The premise ``RORAC(X_i, X) > RORAC(X)`` (by more than ``rtol`` relative)
    is read at ``u0``; when it holds, each ``u0 + h e_i`` on the grid must
    improve portfolio RORAC.  ``epsilon`` is the largest grid step up to which
    every smaller step succeeds.
    """
    hs = np.sort(np.asarray(h_grid, dtype=float))
    if hs.size == 0 or hs[0] <= 0:
        raise ValueError("h grid must be positive and non-empty")
    base = evaluator(None if u0 is None else np.asarray(u0, dtype=float))
    u0 = np.ones(base.n) if u0 is None else np.asarray(u0, dtype=float)
    ra, rp = float(base.roracs[i]), base.portfolio_rorac
    premise = bool(np.isfinite(ra) and ra - rp > rtol * abs(rp))
    if not premise:
        return CompatibilityCheck(i, False, True, float(hs[-1]), ra, rp)
    eps = 0.0
    for h in hs:
        u = u0.copy()
        u[i] += h
        r = evaluator(u).portfolio_rorac
        if not r > rp:
            ok = eps > 0
            return CompatibilityCheck(i, True, ok, eps, ra, rp, {"h": float(h), "rorac": r, "base": rp})
        eps = float(h)
    return CompatibilityCheck(i, True, True, eps, ra, rp)


def linear_evaluator(costs, returns) -> Callable[[np.ndarray], AllocationReport]:
    """Evaluator for ``f(u) = sum c_i u_i`` with returns ``r_i u_i``; handy as a compatibility baseline."""
    c = np.asarray(costs, dtype=float)
    r = np.asarray(returns, dtype=float)

    def ev(u):
        u = np.ones(c.size) if u is None else np.asarray(u, dtype=float)
        return AllocationReport(float(c @ u), c * u, np.zeros(c.size), r * u, "exact", "linear")

    return ev


REGIMES = ("VaR", "ES", "VaR-ES")


def allocate_batch(batch, regime: str, alpha: float, b: int, variant: str = "ratio") -> tuple[float, np.ndarray]:
    """Portfolio risk and Euler allocations of an in-memory batch under one allocation regime.

    ``VaR`` uses the band estimator, ``ES`` the tail-form ES and its tail
    allocation, ``VaR-ES`` the ES allocation rescaled to VaR capital.
    """
    from .empirical import sort_batch
    from .measures import es_empirical, var_empirical

    sb = sort_batch(batch, alpha)
    if regime == "VaR":
        return var_empirical(sb, alpha), alloc_var_band(sb, b, variant)
    es = es_empirical(sb, alpha, "tail")
    es_alloc = alloc_es_tail(sb, alpha, "tail")
    if regime == "ES":
        return es, es_alloc
    if regime == "VaR-ES":
        var = var_empirical(sb, alpha)
        return var, alloc_blend_var_es(es_alloc, es, var)
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def allocate_with_stderr(batch, regime: str, alpha: float, b: int, expected_returns, n_batches: int = 10,
                         variant: str = "ratio", method: str = "MC") -> AllocationReport:
    """:func:`allocate_batch` on the full batch plus batch-splitting standard errors.

    Each of ``n_batches`` contiguous sub-batches is allocated with band
    half-width ``round(b / n_batches)``; the spread of the sub-batch
    estimates divided by ``sqrt(n_batches)`` is reported.  Diagnostics carry
    the standard errors of the portfolio risk and of every RORAC.
    """
    risk, alloc = allocate_batch(batch, regime, alpha, b, variant)
    ret = np.asarray(expected_returns, dtype=float)
    edges = np.linspace(0, batch.m, n_batches + 1).round().astype(np.int64)
    b_sub = max(int(round(b / n_batches)), 0)
    subs, risks = [], []
    for i in range(n_batches):
        r, a = allocate_batch(batch.subset(np.arange(edges[i], edges[i + 1])), regime, alpha, b_sub, variant)
        subs.append(a)
        risks.append(r)
    subs = np.array(subs)
    risks = np.array(risks)
    k = math.sqrt(n_batches)
    stderr = subs.std(axis=0, ddof=1) / k
    with np.errstate(divide="ignore", invalid="ignore"):
        sub_rorac = ret / subs
        sub_port = ret.sum() / risks
    diag = {
        "m": batch.m, "b": b, "alpha": alpha, "regime": regime,
        "risk_stderr": float(risks.std(ddof=1) / k),
        "portfolio_rorac_stderr": float(sub_port.std(ddof=1) / k),
        "rorac_stderr": sub_rorac.std(axis=0, ddof=1) / k,
    }
    return AllocationReport(risk, alloc, stderr, ret, method, f"{regime}_{alpha:g}", None, diag)
