"""VaR, ES and standard-deviation risk measures on batches and discrete laws, plus axiom checkers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .discrete import DiscreteJointDistribution, es_exact, var_exact
from .empirical import RealizationBatch, SortedBatch, sort_batch, tail_count
from .errors import NumericalError

KINDS = ("VaR", "ES-tail", "ES-integral", "StdDevMultiple")
AXIOMS = ("monotonous", "subadditive", "positive_homogeneous", "translation_invariant", "law_invariant")


@dataclass(frozen=True)
class RiskMeasure:
    """A risk measure identified by ``kind`` and its level (or multiplier for ``StdDevMultiple``)."""

    kind: str
    param: float = 0.99

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown risk measure {self.kind!r}; expected one of {KINDS}")
        if self.kind == "StdDevMultiple":
            if not self.param > 0:
                raise ValueError("standard-deviation multiplier must be positive")
        elif not 0.0 < self.param < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def alpha(self) -> float:
        return self.param

    @property
    def label(self) -> str:
        if self.kind == "StdDevMultiple":
            return f"{self.param:g}*sd"
        return f"{self.kind}_{self.param:g}"

    def __call__(self, obj, u=None) -> float:
        return evaluate(self, obj, u)


def _sorted(batch, alpha) -> SortedBatch:
    if isinstance(batch, SortedBatch):
        return batch
    return sort_batch(batch, alpha)


def var_empirical(batch, alpha: float) -> float:
    """``-X_(n_alpha)``: minus the sorted total at the VaR position (weights respected)."""
    sb = _sorted(batch, alpha)
    return -sb.level_value + 0.0


def _tail_rows(sb: SortedBatch, alpha: float) -> tuple[np.ndarray, np.ndarray | None]:
    """Sorted positions forming the finite-sample tail and their weights."""
    batch = sb.batch
    if batch.weights is None:
        k = min(tail_count(alpha, batch.m), batch.m)
        return sb.order[:k], None
    w = batch.weights[sb.order]
    cum = np.cumsum(w) / w.sum()
    k = max(int(np.searchsorted(cum, (1.0 - alpha) * (1.0 + 1e-12), side="right")), 1)
    return sb.order[:k], batch.weights[sb.order[:k]]


def es_empirical(batch, alpha: float, form: str = "integral") -> float:
    """Finite-sample Expected Shortfall.

    ``form="tail"``: minus the (weighted) mean of the worst ``floor((1-alpha) m)``
    realizations.  ``form="integral"``: minus the mean over exactly ``1-alpha``
    of probability mass, with a fractional weight on the boundary order
    statistic; this version is coherent and always ``>= VaR``.
    """
    sb = _sorted(batch, alpha)
    b = sb.batch
    if b.m == 0:
        raise NumericalError("empty tail")
    if form == "tail":
        rows, w = _tail_rows(sb, alpha)
        if rows.size == 0:
            raise NumericalError("empty tail")
        x = b.totals[rows]
        return float(-(x.mean() if w is None else (w @ x) / w.sum())) + 0.0
    if form != "integral":
        raise ValueError(f"unknown ES form {form!r}")
    x = sb.sorted_totals
    w = np.ones(b.m) if b.weights is None else b.weights[sb.order] / b.weights.max()
    total = w.sum()
    mass = (1.0 - alpha) * total
    hi = np.cumsum(w)
    lo = hi - w
    share = np.clip(np.minimum(hi, mass) - lo, 0.0, None)
    return float(-(share @ x) / mass) + 0.0


def std_multiple(batch, c: float) -> float:
    t = batch.totals if isinstance(batch, RealizationBatch) else np.asarray(batch, float)
    if isinstance(batch, RealizationBatch) and batch.weights is not None:
        w = batch.weights / batch.weights.sum()
        mu = w @ t
        return float(c * np.sqrt(w @ (t - mu) ** 2))
    return float(c * t.std())


def evaluate(measure: RiskMeasure, obj, u=None) -> float:
    """Risk of a :class:`DiscreteJointDistribution` (exact, optionally weighted by ``u``) or a batch."""
    if isinstance(obj, DiscreteJointDistribution):
        if measure.kind == "VaR":
            return var_exact(obj, u, measure.param)
        if measure.kind == "ES-tail":
            return es_exact(obj, u, measure.param, "tail")
        if measure.kind == "ES-integral":
            return es_exact(obj, u, measure.param, "integral")
        x = obj.totals(u)
        mu = obj.probs @ x
        return float(measure.param * np.sqrt(obj.probs @ (x - mu) ** 2))
    if u is not None:
        raise ValueError("weights are only supported for discrete distributions")
    if measure.kind == "VaR":
        return var_empirical(obj, measure.param)
    if measure.kind == "ES-tail":
        return es_empirical(obj, measure.param, "tail")
    if measure.kind == "ES-integral":
        return es_empirical(obj, measure.param, "integral")
    return std_multiple(obj, measure.param)


@dataclass(frozen=True)
class AxiomCheck:
    """Outcome of an axiom check; ``counterexample`` describes the first violating instance."""

    measure: RiskMeasure
    axiom: str
    passed: bool
    instances: int
    counterexample: dict | None = None
    notes: list = field(default_factory=list)


def _close(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def _items(evidence) -> list:
    if isinstance(evidence, (DiscreteJointDistribution, tuple)):
        return [evidence]
    return list(evidence)


def _same_law(d1: DiscreteJointDistribution, d2: DiscreteJointDistribution) -> bool:
    grid = np.union1d(d1.totals(), d2.totals())
    f1 = d1.sum_column().cdf(0, grid)
    f2 = d2.sum_column().cdf(0, grid)
    return bool(np.allclose(f1, f2, atol=1e-12, rtol=0))


def check_axiom(measure: RiskMeasure, axiom: str, evidence, h: float | Iterable[float] | None = None) -> AxiomCheck:
    """Evaluate an axiom's defining (in)equality exactly on discrete evidence.

    Evidence per axiom
    ------------------
    monotonous, subadditive
        Two-column joint distributions ``(X, Y)`` (one or a list).  For
        ``monotonous`` the premise ``X <= Y`` atomwise is checked first;
        instances where it fails are skipped.
    positive_homogeneous, translation_invariant
        Distributions (their row totals are ``X``) and ``h`` (scalar or list).
    law_invariant
        Pairs ``(D1, D2)`` whose totals share a law.
    """
    if axiom not in AXIOMS:
        raise ValueError(f"unknown axiom {axiom!r}; expected one of {AXIOMS}")
    rho = lambda d: evaluate(measure, d)  # noqa: E731
    hs = [1.0] if h is None else list(np.atleast_1d(np.asarray(h, dtype=float)))
    checked = 0
    notes: list[str] = []
    for k, ev in enumerate(_items(evidence)):
        if axiom in ("monotonous", "subadditive"):
            if ev.n != 2:
                raise ValueError(f"{axiom} evidence must be two-column joint distributions")
            dx, dy = ev.column(0), ev.column(1)
            if axiom == "monotonous":
                if not np.all(ev.values[:, 0] <= ev.values[:, 1]):
                    notes.append(f"instance {k}: premise X <= Y fails, skipped")
                    continue
                rx, ry = rho(dx), rho(dy)
                checked += 1
                if rx < ry and not _close(rx, ry):
                    return AxiomCheck(measure, axiom, False, checked, {"instance": k, "rho(X)": rx, "rho(Y)": ry}, notes)
            else:
                rs, rx, ry = rho(ev.sum_column()), rho(dx), rho(dy)
                checked += 1
                if rs > rx + ry and not _close(rs, rx + ry):
                    return AxiomCheck(measure, axiom, False, checked, {"instance": k, "rho(X+Y)": rs, "rho(X)": rx, "rho(Y)": ry}, notes)
        elif axiom in ("positive_homogeneous", "translation_invariant"):
            base = ev.sum_column()
            r0 = rho(base)
            for hv in hs:
                checked += 1
                if axiom == "positive_homogeneous":
                    if hv <= 0:
                        raise ValueError("homogeneity needs h > 0")
                    r1 = rho(DiscreteJointDistribution(base.values * hv, base.probs))
                    want = hv * r0
                else:
                    r1 = rho(DiscreteJointDistribution(base.values + hv, base.probs))
                    want = r0 - hv
                if not _close(r1, want):
                    return AxiomCheck(measure, axiom, False, checked, {"instance": k, "h": hv, "rho(transformed)": r1, "required": want}, notes)
        else:
            d1, d2 = ev
            if not _same_law(d1, d2):
                notes.append(f"instance {k}: laws differ, skipped")
                continue
            r1, r2 = rho(d1), rho(d2)
            checked += 1
            if not _close(r1, r2):
                return AxiomCheck(measure, axiom, False, checked, {"instance": k, "rho(X)": r1, "rho(Y)": r2}, notes)
    return AxiomCheck(measure, axiom, True, checked, None, notes)


def example1_subadditivity_counterexample() -> DiscreteJointDistribution:
    """Stored VaR counterexample: the independent pair of the first worked example."""
    from .discrete import example1_distribution

    return example1_distribution()
