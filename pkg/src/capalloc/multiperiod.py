"""Commitment-period evaluation of a new investment over an evolving background portfolio."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocation import allocate_with_stderr
from .discrete import (DiscreteJointDistribution, es_exact, euler_alloc_es_exact, euler_alloc_var_exact,
                       product_distribution, var_exact)
from .models import DiscreteAsset, PortfolioSpec, sample_portfolio

_REGIME = {"VaR": "VaR", "ES-tail": "ES", "ES": "ES", "VaR-ES": "VaR-ES"}


@dataclass(frozen=True)
class CommitmentScenario:
    """A candidate held for ``horizon`` periods; ``background[t]`` lists ``(composition, probability)``.

    A composition is a tuple of asset models making up the rest of the
    portfolio in that period.
    """

    horizon: int
    candidate: object
    background: tuple

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least one period")
        if len(self.background) != self.horizon:
            raise ValueError("need one background distribution per period")
        for t, period in enumerate(self.background):
            p = sum(prob for _, prob in period)
            if abs(p - 1.0) > 1e-12:
                raise ValueError(f"period {t} probabilities sum to {p}, not 1")


@dataclass(frozen=True)
class CellEstimate:
    """Candidate allocation and RORAC in one portfolio, with simulation standard errors (0 for exact)."""

    allocation: float
    allocation_stderr: float
    rorac: float
    rorac_stderr: float
    risk: float


def _as_tuple(comp) -> tuple:
    return tuple(comp) if isinstance(comp, (tuple, list)) else (comp,)


def candidate_cell(candidate, composition, measure: str = "VaR", alpha: float = 0.99, engine: str = "mc",
                   m: int = 10**6, b: int = 1000, seed: int = 0, threads: int = 1) -> CellEstimate:
    """Allocation of ``candidate`` inside ``candidate + composition``.

    ``engine="mc"`` simulates with the candidate as the first column (so
    cells sharing a candidate type share its draws); ``engine="exact"``
    enumerates discrete assets.
    """
    assets = (candidate,) + _as_tuple(composition)
    mean = float(candidate.mean())
    if engine == "exact":
        marg = [(a.values, a.probs) for a in assets if isinstance(a, DiscreteAsset)]
        if len(marg) != len(assets):
            raise ValueError("exact engine needs discrete assets")
        joint = product_distribution(marg)
        pair = DiscreteJointDistribution(np.stack([joint.values[:, 0], joint.values[:, 1:].sum(axis=1)], axis=1),
                                         joint.probs)
        if measure == "VaR":
            alloc, risk = euler_alloc_var_exact(pair, alpha)[0], var_exact(pair, None, alpha)
        else:
            form = "integral" if measure == "ES-integral" else "tail"
            alloc, risk = euler_alloc_es_exact(pair, alpha, form)[0], es_exact(pair, None, alpha, form)
        return CellEstimate(float(alloc), 0.0, mean / alloc if alloc else math.nan, 0.0, float(risk))
    if engine != "mc":
        raise ValueError(f"unknown engine {engine!r}")
    spec = PortfolioSpec(assets)
    batch = sample_portfolio(spec, m, seed, threads)
    rep = allocate_with_stderr(batch, _REGIME[measure], alpha, b, spec.expected_returns())
    a0 = float(rep.allocations[0])
    return CellEstimate(a0, float(rep.stderr[0]), mean / a0 if a0 else math.nan,
                        float(rep.diagnostics["rorac_stderr"][0]), rep.risk)


@dataclass
class RoracTable:
    """``values[i, j]``: RORAC of a new investment of type ``i`` next to an existing one of type ``j``."""

    labels: list
    values: np.ndarray
    stderr: np.ndarray
    title: str = "RORAC"

    def to_csv(self, path, digits: int = 17) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["new", "other", "rorac", "stderr"])
            for i, li in enumerate(self.labels):
                for j, lj in enumerate(self.labels):
                    wr.writerow([li, lj, format(float(self.values[i, j]), f".{digits}g"),
                                 format(float(self.stderr[i, j]), f".{digits}g")])
        return path

    def to_text(self, digits: int = 3) -> str:
        w = max(12, digits + 8)
        corner = "new \\ other"
        head = f"{corner:<14}" + "".join(f"{lab:>{w}}" for lab in self.labels)
        lines = [self.title, head]
        for i, li in enumerate(self.labels):
            cells = "".join(f"{self.values[i, j]:>{w}.{digits}f}" for j in range(len(self.labels)))
            lines.append(f"{li:<14}{cells}")
        return "\n".join(lines) + "\n"


def single_period_rorac_table(asset_types: Sequence, measure: str = "VaR", engine: str = "mc", alpha: float = 0.99,
                              m: int = 10**6, b: int = 1000, seed: int = 0, threads: int = 1,
                              labels: Sequence[str] | None = None) -> RoracTable:
    """RORAC of each new type against each other type, on common random numbers across cells."""
    k = len(asset_types)
    if k < 2:
        raise ValueError("need at least two asset types")
    labels = list(labels) if labels is not None else [f"X_{i + 1}" for i in range(k)]
    vals = np.empty((k, k))
    errs = np.empty((k, k))
    for i, new in enumerate(asset_types):
        for j, other in enumerate(asset_types):
            cell = candidate_cell(new, other, measure, alpha, engine, m, b, seed, threads)
            vals[i, j], errs[i, j] = cell.rorac, cell.rorac_stderr
    return RoracTable(labels, vals, errs, f"{measure}_{alpha:g} RORAC of new investment")


def commitment_average(table: RoracTable, next_probs: Sequence[float] | None = None,
                       horizon: int = 2) -> RoracTable:
    """Average RORAC over the commitment period from single-period values.

    Period 1 pairs the new type with the known old type; every later period
    pairs it with a fresh draw from ``next_probs`` over the types.
    """
    k = len(table.labels)
    p = np.full(k, 1.0 / k) if next_probs is None else np.asarray(next_probs, dtype=float)
    later = table.values @ p
    later_err = np.sqrt((table.stderr ** 2) @ (p ** 2))
    vals = (table.values + (horizon - 1) * later[:, None]) / horizon
    # approximate: ignores the covariance between a cell and the row average containing it
    errs = np.sqrt(table.stderr ** 2 + ((horizon - 1) * later_err[:, None]) ** 2) / horizon
    return RoracTable(table.labels, vals, errs, f"average RORAC over {horizon} periods")


def expected_commitment_alloc(scn: CommitmentScenario, measure: str = "VaR", engine: str = "mc", **kw) -> float:
    """``(1/T) sum_t sum_c P(c) alloc(candidate | candidate + c)``."""
    total = 0.0
    cache: dict = {}
    for period in scn.background:
        for comp, prob in period:
            key = id(comp) if not isinstance(comp, (tuple, list)) else tuple(map(id, comp))
            if key not in cache:
                cache[key] = candidate_cell(scn.candidate, comp, measure, engine=engine, **kw)
            total += prob * cache[key].allocation
    return total / scn.horizon


def expected_commitment_rorac(scn: CommitmentScenario, measure: str = "VaR", engine: str = "mc", **kw) -> float:
    """Period-averaged expected RORAC of the candidate (the quantity averaged in the two-year table)."""
    total = 0.0
    for period in scn.background:
        for comp, prob in period:
            total += prob * candidate_cell(scn.candidate, comp, measure, engine=engine, **kw).rorac
    return total / scn.horizon


def prose_average(first: float, later: Sequence[float], probs: Sequence[float] | None = None) -> float:
    """``(first + E[later]) / 2`` for a two-period commitment."""
    later = np.asarray(later, dtype=float)
    p = np.full(later.size, 1.0 / later.size) if probs is None else np.asarray(probs, dtype=float)
    return (first + float(later @ p)) / 2


@dataclass(frozen=True)
class MarginalCheck:
    passed: bool
    allocation: float
    increase: float


def marginal_increase_check(portfolio: DiscreteJointDistribution, candidate: int, measure: str = "ES-integral",
                            alpha: float = 0.99, tol: float = 1e-9) -> MarginalCheck:
    """Is the candidate's Euler allocation at least the risk it adds, ``rho(X + Y) - rho(X)``?

    Column ``candidate`` is the new investment; the others sum to ``X``.
    """
    vals = portfolio.values
    y = vals[:, candidate]
    x = np.delete(vals, candidate, axis=1).sum(axis=1)
    pair = DiscreteJointDistribution(np.stack([y, x], axis=1), portfolio.probs)
    base = DiscreteJointDistribution(x[:, None], portfolio.probs)
    if measure == "VaR":
        alloc = float(euler_alloc_var_exact(pair, alpha)[0])
        inc = var_exact(pair, None, alpha) - var_exact(base, None, alpha)
    else:
        form = "tail" if measure == "ES-tail" else "integral"
        alloc = float(euler_alloc_es_exact(pair, alpha, form)[0])
        inc = es_exact(pair, None, alpha, form) - es_exact(base, None, alpha, form)
    return MarginalCheck(bool(alloc >= inc - tol * max(1.0, abs(inc))), alloc, float(inc))
