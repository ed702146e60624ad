"""Exact VaR, ES and Euler allocations on finite joint distributions.

Everything here is computed by enumerating atoms, so it doubles as the
ground-truth oracle for the simulation estimators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

MAX_ATOMS = 10**7
# atoms whose weighted total is this close to -VaR count as the conditioning event
LEVEL_TOL = 1e-9
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteJointDistribution:
    """Finite law of ``(X_1, ..., X_n)``: one row of ``values`` per atom."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if v.shape[0] != p.shape[0]:
            raise ValueError("one probability per atom required")
        if p.size == 0:
            raise ValueError("distribution has no atoms")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        if not np.all(np.isfinite(v)):
            raise ValueError("atom values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[Sequence[float], float]]):
        vals = np.array([np.atleast_1d(np.asarray(a, dtype=float)) for a, _ in atoms])
        return cls(vals, np.array([p for _, p in atoms], dtype=float))

    @classmethod
    def point_mass(cls, values) -> "DiscreteJointDistribution":
        return cls(np.atleast_2d(np.asarray(values, dtype=float)), np.array([1.0]))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def totals(self, u=None) -> np.ndarray:
        if u is None:
            return self.values.sum(axis=1)
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise ValueError(f"weight vector must have length {self.n}")
        return self.values @ u

    def column(self, i: int) -> "DiscreteJointDistribution":
        return DiscreteJointDistribution(self.values[:, [i]], self.probs)

    def with_columns(self, cols: np.ndarray) -> "DiscreteJointDistribution":
        return DiscreteJointDistribution(cols, self.probs)

    def sum_column(self) -> "DiscreteJointDistribution":
        """Law of the portfolio total as a one-asset distribution."""
        return DiscreteJointDistribution(self.totals()[:, None], self.probs)

    def cdf(self, i: int, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        x = self.values[:, i]
        return np.array([self.probs[x <= zz].sum() for zz in z])

    @classmethod
    def from_csv(cls, path) -> "DiscreteJointDistribution":
        """Load ``x_1,...,x_n,prob`` rows."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "prob" or not all(h.startswith("x_") for h in header[:-1]):
            raise ValueError("expected header x_1,...,x_n,prob")
        data = np.array([[float(v) for v in r] for r in body], dtype=float)
        return cls(data[:, :-1], data[:, -1])

    def to_csv(self, path, digits: int = 17) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow([f"x_{i + 1}" for i in range(self.n)] + ["prob"])
            for v, p in zip(self.values, self.probs):
                wr.writerow([format(float(x), f".{digits}g") for x in v] + [format(float(p), f".{digits}g")])
        return path


def _as_marginal(m) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, DiscreteJointDistribution):
        if m.n != 1:
            raise ValueError("marginals must be one-dimensional")
        return m.values[:, 0], m.probs
    vals, probs = m
    vals = np.asarray(vals, dtype=float).reshape(-1)
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if abs(probs.sum() - 1.0) > _PROB_TOL:
        raise ValueError("each marginal must sum to 1")
    return vals, probs


def product_distribution(marginals) -> DiscreteJointDistribution:
    """Independent joint law from per-asset ``(values, probs)`` marginals."""
    margs = [_as_marginal(m) for m in marginals]
    count = 1
    for v, _ in margs:
        count *= v.size
    if count > MAX_ATOMS:
        raise ValueError(f"product has {count} atoms, above the bound of {MAX_ATOMS}")
    grids = np.meshgrid(*[v for v, _ in margs], indexing="ij")
    pgrids = np.meshgrid(*[p for _, p in margs], indexing="ij")
    values = np.stack([g.reshape(-1) for g in grids], axis=1)
    probs = np.prod(np.stack([g.reshape(-1) for g in pgrids], axis=1), axis=1)
    return DiscreteJointDistribution(values, probs / probs.sum())


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _loss_law(dist: DiscreteJointDistribution, u):
    loss = -dist.totals(u)
    order = np.argsort(loss, kind="stable")
    return loss[order], dist.probs[order], order


def var_exact(dist: DiscreteJointDistribution, u=None, alpha: float = 0.99) -> float:
    """``VaR_alpha(sum u_i X_i) = inf{z : P(-X <= z) >= alpha}`` by enumeration."""
    _check_alpha(alpha)
    loss, p, _ = _loss_law(dist, u)
    cum = np.cumsum(p)
    k = int(np.searchsorted(cum, alpha - _PROB_TOL, side="left"))
    return float(loss[min(k, loss.size - 1)])


def es_exact(dist: DiscreteJointDistribution, u=None, alpha: float = 0.99, form: str = "integral") -> float:
    """Expected Shortfall by enumeration.

    ``form="tail"`` is ``-E[X | X <= -VaR]``; ``form="integral"`` is
    ``(1/(1-alpha)) * int_alpha^1 VaR_tau dtau``, integrated exactly over the
    plateaus of the piecewise-constant quantile function.
    """
    _check_alpha(alpha)
    if form == "tail":
        var = var_exact(dist, u, alpha)
        x = dist.totals(u)
        mask = x <= -var + LEVEL_TOL
        pm = dist.probs[mask].sum()
        if pm <= 0:
            raise NumericalError("empty tail event")
        return float(-(dist.probs[mask] @ x[mask]) / pm)
    if form != "integral":
        raise ValueError(f"unknown ES form {form!r}")
    loss, p, _ = _loss_law(dist, u)
    hi = np.cumsum(p)
    lo = hi - p
    overlap = np.clip(np.minimum(hi, 1.0) - np.maximum(lo, alpha), 0.0, None)
    return float(overlap @ loss / (1.0 - alpha))


def tail_measure(dist: DiscreteJointDistribution, alpha: float, u=None) -> np.ndarray:
    """Per-atom weights of the ES-integral tail: ``p`` strictly beyond VaR, fractional mass on the VaR atoms.

    The weights sum to ``1 - alpha``.
    """
    var = var_exact(dist, u, alpha)
    loss = -dist.totals(u)
    beyond = loss > var + LEVEL_TOL
    at = np.abs(loss - var) <= LEVEL_TOL
    q = np.where(beyond, dist.probs, 0.0)
    rest = (1.0 - alpha) - q.sum()
    pat = dist.probs[at].sum()
    if pat > 0:
        q = q + np.where(at, dist.probs * (rest / pat), 0.0)
    return q


def euler_alloc_var_exact(dist: DiscreteJointDistribution, alpha: float) -> np.ndarray:
    """``-E[X_i | X = -VaR_alpha(X)]`` over the atoms sitting at the VaR level."""
    var = var_exact(dist, None, alpha)
    x = dist.totals()
    mask = np.abs(x + var) <= LEVEL_TOL
    pm = dist.probs[mask].sum()
    if pm <= 0:
        raise NumericalError("no atom at VaR level")
    return -(dist.probs[mask] @ dist.values[mask]) / pm + 0.0


def euler_alloc_es_exact(dist: DiscreteJointDistribution, alpha: float, form: str = "tail") -> np.ndarray:
    """ES Euler allocation.

    ``form="tail"`` gives ``-E[X_i | X <= -VaR_alpha(X)]`` and sums to the
    tail-conditional ES; ``form="integral"`` weights the atoms with
    :func:`tail_measure` and sums to the integral ES.
    """
    if form == "tail":
        var = var_exact(dist, None, alpha)
        x = dist.totals()
        mask = x <= -var + LEVEL_TOL
        pm = dist.probs[mask].sum()
        if pm <= 0:
            raise NumericalError("empty tail event")
        return -(dist.probs[mask] @ dist.values[mask]) / pm + 0.0
    if form != "integral":
        raise ValueError(f"unknown ES form {form!r}")
    q = tail_measure(dist, alpha)
    return -(q @ dist.values) / (1.0 - alpha) + 0.0


def fd_alloc(risk_of_weights: Callable[[np.ndarray], float], u=None, h: float | None = None, n: int | None = None) -> np.ndarray:
    """Central finite-difference gradient of ``f(u)``; the Euler allocation at ``u = (1,...,1)``."""
    if u is None:
        if n is None:
            raise ValueError("need u or n")
        u = np.ones(n)
    u = np.asarray(u, dtype=float)
    if h is None:
        f0 = risk_of_weights(u)
        if not np.isfinite(f0):
            raise NumericalError("risk function returned a non-finite value")
        h = 1e-3 * max(1.0, abs(f0))
    if h <= 0:
        raise ValueError("step size must be positive")
    out = np.empty(u.size)
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = h
        fp, fm = risk_of_weights(u + e), risk_of_weights(u - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"risk function not finite around asset {i}")
        out[i] = (fp - fm) / (2 * h)
    return out


def risk_of_weights(dist: DiscreteJointDistribution, kind: str = "VaR", alpha: float = 0.99) -> Callable[[np.ndarray], float]:
    """``u -> rho(sum u_i X_i)`` for the exact measures."""
    if kind == "VaR":
        return lambda u: var_exact(dist, u, alpha)
    if kind in ("ES", "ES-integral"):
        return lambda u: es_exact(dist, u, alpha, "integral")
    if kind == "ES-tail":
        return lambda u: es_exact(dist, u, alpha, "tail")
    raise ValueError(f"unknown measure {kind!r}")


def cdf_dominates(dist_x: DiscreteJointDistribution, dist_y: DiscreteJointDistribution, i: int = 0, j: int = 0) -> bool:
    """True when ``P(X <= z) >= P(Y <= z)`` for every ``z`` (X stochastically smaller)."""
    grid = np.union1d(dist_x.values[:, i], dist_y.values[:, j])
    fx = dist_x.cdf(i, grid)
    fy = dist_y.cdf(j, grid)
    return bool(np.all(fx >= fy - _PROB_TOL))


@dataclass(frozen=True)
class MonotonicityCheck:
    smaller: int
    larger: int
    dominance: bool
    allocations: np.ndarray
    violated: bool


def check_allocation_monotonicity(dist: DiscreteJointDistribution, alpha: float, i: int, j: int, measure: str = "VaR") -> MonotonicityCheck:
    """Does ``X_i`` stochastically below ``X_j`` get at least as much capital?

    A violation means the dominance premise holds but ``alloc_i < alloc_j``.
    """
    dom = cdf_dominates(dist, dist, i, j)
    if measure == "VaR":
        alloc = euler_alloc_var_exact(dist, alpha)
    else:
        alloc = euler_alloc_es_exact(dist, alpha, "integral" if measure == "ES-integral" else "tail")
    violated = dom and alloc[i] < alloc[j] - LEVEL_TOL
    return MonotonicityCheck(i, j, dom, alloc, bool(violated))


def example1_distribution() -> DiscreteJointDistribution:
    """Two independent assets: ``X_1 in {0, -200}``, ``X_2 in {0, -100}``, loss probability 0.0075 each."""
    return product_distribution([([0.0, -200.0], [0.9925, 0.0075]), ([0.0, -100.0], [0.9925, 0.0075])])


def _example2_grid(grid_points: int) -> tuple[np.ndarray, np.ndarray]:
    if grid_points < 3 or grid_points % 2 == 0:
        raise ValueError("grid_points must be odd and >= 3")
    half = grid_points // 2
    # k/half keeps the grid exactly symmetric in floating point
    x1 = np.arange(-half, half + 1) / half
    x2 = np.where(x1 <= 0, -x1, -2.0 * x1)
    return x1, x2


def example2_distribution(grid_points: int = 101) -> DiscreteJointDistribution:
    """Coupled pair ``(3 X_1, X_2)`` with ``X_1`` uniform on a symmetric grid over ``[-1, 1]``.

    ``X_2 = -X_1`` when ``X_1 <= 0`` and ``-2 X_1`` otherwise, so the
    portfolio is ``2 X_1`` on the downside and ``X_1`` on the upside.
    """
    x1, x2 = _example2_grid(grid_points)
    probs = np.full(grid_points, 1.0 / grid_points)
    return DiscreteJointDistribution(np.stack([3.0 * x1, x2], axis=1), probs)


def example2_inputs(grid_points: int = 101) -> DiscreteJointDistribution:
    """``(X_1, X_2)`` before scaling, for the dominance check."""
    x1, x2 = _example2_grid(grid_points)
    return DiscreteJointDistribution(np.stack([x1, x2], axis=1), np.full(grid_points, 1.0 / grid_points))
