"""Parametric asset models, calibration helpers and the chunked sampler.

Random streams
--------------
Realizations are generated in fixed chunks of ``CHUNK_ROWS`` rows.  Chunk
``c`` draws from its own Philox generator keyed by ``SeedSequence(seed,
spawn_key=(c,))``, so a batch is bit-identical however many threads build it
and any chunk can be regenerated on its own.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .empirical import RealizationBatch

CHUNK_ROWS = 65536
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def chunk_bounds(m: int) -> list[tuple[int, int]]:
    return [(s, min(s + CHUNK_ROWS, m)) for s in range(0, m, CHUNK_ROWS)]


def map_chunks(fn: Callable[[int, int, int], object], m: int, threads: int = 1) -> list:
    """Apply ``fn(chunk, start, stop)`` to every chunk; results come back in chunk order."""
    bounds = chunk_bounds(m)
    jobs = [(c, s, e) for c, (s, e) in enumerate(bounds)]
    if threads <= 1 or len(jobs) == 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def log_density_Y(asset: "ShiftedLognormalAsset", y):
    """Gaussian log-density of the log-loss driver ``Y ~ N(mu, sigma^2)``."""
    z = (np.asarray(y, dtype=float) - asset.mu) / asset.sigma
    return -0.5 * z * z - math.log(asset.sigma) - _LOG_SQRT_2PI


def calibrate_a(mu: float, sigma: float, target_mean: float) -> float:
    """Shift ``a`` with ``E[a - exp(Y)] = target_mean`` for ``Y ~ N(mu, sigma^2)``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return target_mean + math.exp(mu + 0.5 * sigma * sigma)


def calibrate_pareto_scale(gamma: float, p_loss: float, base: float, target_mean: float) -> float:
    """Pareto scale ``b`` giving ``E[base - I*Y] = target_mean`` (Pareto mean ``b/(gamma-1)``)."""
    if gamma <= 1:
        raise ValueError("gamma must exceed 1 for a finite mean")
    if not 0 < p_loss < 1:
        raise ValueError("p_loss must lie in (0, 1)")
    b = (base - target_mean) * (gamma - 1.0) / p_loss
    if not b > 0:
        raise ValueError(f"calibrated Pareto scale must be positive, got {b}")
    return b


@dataclass(frozen=True)
class ShiftedLognormalAsset:
    """``X = a - exp(Y)`` with ``Y ~ N(mu, sigma^2)``; bounded above by ``a``."""

    a: float
    mu: float
    sigma: float
    columns = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def calibrated(cls, mu: float, sigma: float, target_mean: float, reference_mu: float | None = None):
        """Calibrate ``a`` to hit ``target_mean``; ``reference_mu`` calibrates on another location instead."""
        ref = mu if reference_mu is None else reference_mu
        return cls(calibrate_a(ref, sigma, target_mean), mu, sigma)

    def mean(self) -> float:
        return self.a - math.exp(self.mu + 0.5 * self.sigma ** 2)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        y = self.mu + self.sigma * rng.standard_normal(size)
        return (self.a - np.exp(y))[:, None]


@dataclass(frozen=True)
class BernoulliParetoAsset:
    """``X = base - I*Y`` with ``I ~ Bernoulli(p_loss)`` and Lomax ``Y`` of tail index ``gamma`` and scale ``b``."""

    gamma: float
    b: float
    p_loss: float = 0.1
    base: float = 0.5
    columns = 1

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not self.b > 0:
            raise ValueError("Pareto scale must be positive")
        if not 0 < self.p_loss < 1:
            raise ValueError("p_loss must lie in (0, 1)")

    @classmethod
    def calibrated(cls, gamma: float, target_mean: float = 0.2, p_loss: float = 0.1, base: float = 0.5):
        return cls(gamma, calibrate_pareto_scale(gamma, p_loss, base, target_mean), p_loss, base)

    def mean(self) -> float:
        return self.base - self.p_loss * self.b / (self.gamma - 1.0)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        hit = rng.random(size) < self.p_loss
        u = 1.0 - rng.random(size)  # (0, 1]
        y = self.b * (u ** (-1.0 / self.gamma) - 1.0)
        return (self.base - np.where(hit, y, 0.0))[:, None]


@dataclass(frozen=True)
class ConstantAsset:
    value: float
    columns = 1

    def mean(self) -> float:
        return self.value

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full((size, 1), float(self.value))


@dataclass(frozen=True)
class DiscreteAsset:
    values: tuple
    probs: tuple
    columns = 1

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(self.values) != p.size or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("discrete asset needs matching values and probabilities summing to 1")

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(self.values) - 1)
        return np.asarray(self.values, dtype=float)[idx][:, None]


@dataclass(frozen=True)
class Example2Pair:
    """Coupled pair ``(scale * X_1, X_2)``: ``X_1 ~ U[-half_width, half_width]``,
    ``X_2 = -X_1`` on ``X_1 <= 0`` and ``-2 X_1`` otherwise."""

    scale: float = 3.0
    half_width: float = 1.0
    columns = 2

    def mean(self) -> tuple[float, float]:
        # E[X_1] = 0; E[X_2] = E[-X_1; X_1<=0] + E[-2X_1; X_1>0] = w/4 - w/2
        return (0.0, -self.half_width / 4.0)

    def draw_x1(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.half_width * (2.0 * rng.random(size) - 1.0)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        x1 = self.draw_x1(rng, size)
        x2 = np.where(x1 <= 0, -x1, -2.0 * x1)
        return np.stack([self.scale * x1, x2], axis=1)


@dataclass(frozen=True)
class PortfolioSpec:
    """Assets, per-column weights ``u`` and optional group labels.

    Each model contributes ``model.columns`` portfolio columns (the coupled
    pair contributes two); ``weights`` and ``groups`` are per column.
    """

    assets: tuple
    weights: np.ndarray | None = None
    groups: tuple | None = None
    names: tuple | None = None
    _cols: int = field(init=False, repr=False, compare=False, default=0)

    def __post_init__(self):
        assets = tuple(self.assets)
        if not assets:
            raise ValueError("no assets")
        object.__setattr__(self, "assets", assets)
        ncol = sum(a.columns for a in assets)
        object.__setattr__(self, "_cols", ncol)
        w = np.ones(ncol) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if w.size != ncol:
            raise ValueError(f"weights length {w.size} does not match {ncol} asset columns")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)
        if self.groups is not None and len(self.groups) != ncol:
            raise ValueError("groups length does not match asset columns")

    @property
    def n(self) -> int:
        return self._cols

    @property
    def dependence(self) -> str:
        return "example2-coupling" if any(isinstance(a, Example2Pair) for a in self.assets) else "independent"

    @property
    def all_lognormal(self) -> bool:
        return all(isinstance(a, ShiftedLognormalAsset) for a in self.assets)

    def with_weights(self, weights) -> "PortfolioSpec":
        return PortfolioSpec(self.assets, weights, self.groups, self.names)

    def column_means(self) -> np.ndarray:
        out = []
        for a in self.assets:
            mu = a.mean()
            out.extend(mu if isinstance(mu, tuple) else [mu])
        return np.asarray(out, dtype=float)

    def expected_returns(self) -> np.ndarray:
        """``E[u_i X_i]`` per column."""
        return self.weights * self.column_means()

    def lognormal_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.all_lognormal:
            raise ValueError("this estimator requires shifted-lognormal assets only")
        a = np.array([x.a for x in self.assets])
        mu = np.array([x.mu for x in self.assets])
        s = np.array([x.sigma for x in self.assets])
        return a, mu, s


class OpCounter:
    """Tally of elementwise floating-point work: ``add`` (incl. subtraction), ``mul`` (incl. division), ``exp``, ``log``."""

    KINDS = ("add", "mul", "exp", "log")

    def __init__(self):
        self.counts = dict.fromkeys(self.KINDS, 0)

    def tally(self, **kw):
        for k, v in kw.items():
            self.counts[k] += int(v)

    def merge(self, other: "OpCounter"):
        self.tally(**other.counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def draw_chunk(spec: PortfolioSpec, seed: int, chunk: int, rows: int,
               shift=None, sigma_is=None, counter: OpCounter | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Weighted components ``u_i X_i``, their row totals and (for a proposal) IS log-weights of one chunk.

    Lognormal portfolios draw one ``(rows, n)`` normal matrix; the proposal
    ``Y = mu + shift + sigma_is * Z`` reuses the same normals, so a zero
    shift reproduces the plain draw bit for bit.  ``counter`` tallies the
    per-element arithmetic of the lognormal path.
    """
    rng = chunk_rng(seed, chunk)
    n = spec.n
    unit = bool(np.all(spec.weights == 1.0))
    if spec.all_lognormal:
        a, mu, s = spec.lognormal_params()
        z = rng.standard_normal((rows, n))
        logw = None
        if shift is None and sigma_is is None:
            y = mu + s * z
        else:
            sh = np.zeros(n) if shift is None else np.broadcast_to(np.asarray(shift, dtype=float), (n,))
            sp = s if sigma_is is None else np.broadcast_to(np.asarray(sigma_is, dtype=float), (n,))
            y = (mu + sh) + sp * z
            logw = log_likelihood_ratio(y, mu, s, mu + sh, sp, counter)
        comps = a - np.exp(y)
        if not unit:
            comps *= spec.weights
        totals = comps.sum(axis=1)
        if counter is not None:
            k = rows * n
            counter.tally(add=3 * k, mul=k * (1 if unit else 2), exp=k)
        return comps, totals, logw
    if shift is not None or sigma_is is not None:
        raise ValueError("importance sampling proposals need shifted-lognormal assets")
    comps = np.concatenate([asset.draw(rng, rows) for asset in spec.assets], axis=1)
    if not unit:
        comps *= spec.weights
    return comps, comps.sum(axis=1), None


def log_likelihood_ratio(y, mu, sigma, mu_is, sigma_is, counter: OpCounter | None = None) -> np.ndarray:
    """Row sums of ``log phi(y; mu, sigma) - log phi(y; mu_is, sigma_is)``.

    With a common scale the quadratic terms cancel and the ratio is linear in
    ``y``: ``(mu + mu_is)/2 - y`` times ``(mu_is - mu)/sigma^2``.
    """
    k = y.size
    if np.array_equal(sigma, sigma_is):
        mid = 0.5 * (mu + mu_is)
        slope = (mu_is - mu) / (sigma * sigma)
        if counter is not None:
            counter.tally(add=2 * k, mul=k)
        return ((mid - y) * slope).sum(axis=1)
    if counter is not None:
        counter.tally(add=4 * k, mul=5 * k)
    z0 = (y - mu) / sigma
    z1 = (y - mu_is) / sigma_is
    return (0.5 * (z1 * z1 - z0 * z0) + np.log(sigma_is / sigma)).sum(axis=1)


def sample_portfolio(spec: PortfolioSpec, m: int, seed: int, threads: int = 1) -> RealizationBatch:
    """``m`` i.i.d. realizations of the weighted portfolio (deterministic in ``seed``)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    comps = np.empty((m, spec.n))
    totals = np.empty(m)

    def work(c, s, e):
        comps[s:e], totals[s:e], _ = draw_chunk(spec, seed, c, e - s)

    map_chunks(work, m, threads)
    return RealizationBatch(comps, totals, None, seed)


def example5_spec(reference_mu: float | None = None, group_size: int = 30, mus: Sequence[float] = (0.44, 0.45, 0.47),
                  sigma: float = 0.5, target_mean: float = 0.2) -> PortfolioSpec:
    """Three groups of identical shifted-lognormal assets.

    ``reference_mu=None`` calibrates every asset to mean ``target_mean``;
    a number calibrates one common shift on that location for all assets.
    """
    assets, groups = [], []
    for g, mu in enumerate(mus):
        asset = ShiftedLognormalAsset.calibrated(mu, sigma, target_mean, reference_mu)
        assets += [asset] * group_size
        groups += [g + 1] * group_size
    return PortfolioSpec(tuple(assets), None, tuple(groups))


def example3_assets(target_mean: float = 0.2) -> tuple[BernoulliParetoAsset, BernoulliParetoAsset]:
    """Light-tailed (``gamma=5``) and heavy-tailed (``gamma=1.7``) loss assets."""
    return (BernoulliParetoAsset.calibrated(5.0, target_mean), BernoulliParetoAsset.calibrated(1.7, target_mean))
