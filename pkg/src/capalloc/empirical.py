"""Order statistics, empirical and importance-weighted quantiles over realization batches.

Conventions
-----------
Portfolio values ``X`` are cash flows, so losses are negative.  Realizations
are sorted ascending (worst first) and every quantile is taken on ``X``
itself; risk measures negate afterwards.  ``VaR_a(X) = q_a(-X)`` therefore
lives at the 0-based sorted position ``m - ceil(a m)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError

# relative slack so that alpha*m = 989999.9999999999 still counts as 990000
_RANK_FUZZ = 1e-12


@dataclass(frozen=True)
class RealizationBatch:
    """``m`` realizations of an ``n``-asset portfolio.

    Attributes
    ----------
    components : ndarray, shape (m, n)
        Per-asset values of each realization.
    totals : ndarray, shape (m,)
        Row sums of ``components``.
    weights : ndarray, shape (m,), optional
        Nonnegative importance weights; ``None`` means equally weighted.
    seed : int, optional
        Seed the batch was generated from.
    """

    components: np.ndarray
    totals: np.ndarray
    weights: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.ndim == 1:
            comps = comps[:, None]
        totals = np.asarray(self.totals, dtype=float).reshape(-1)
        if comps.shape[0] != totals.shape[0]:
            raise ValueError("components and totals disagree on the number of realizations")
        if totals.size and comps.shape[1]:
            err = np.abs(comps.sum(axis=1) - totals)
            if np.any(err > 1e-9 * np.maximum(1.0, np.abs(totals))):
                raise ValueError("totals are not the row sums of components")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "totals", totals)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != totals.shape:
                raise ValueError("weights must have one entry per realization")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            if totals.size and not np.any(w > 0):
                raise ValueError("weights are all zero")
            object.__setattr__(self, "weights", w)

    @classmethod
    def from_components(cls, components, weights=None, seed=None) -> "RealizationBatch":
        comps = np.asarray(components, dtype=float)
        if comps.ndim == 1:
            comps = comps[:, None]
        return cls(comps, comps.sum(axis=1), weights, seed)

    @classmethod
    def from_totals(cls, totals, weights=None, seed=None) -> "RealizationBatch":
        """Single-asset batch whose only component is the total."""
        t = np.asarray(totals, dtype=float).reshape(-1)
        return cls(t[:, None], t, weights, seed)

    @property
    def m(self) -> int:
        return self.totals.shape[0]

    @property
    def n(self) -> int:
        return self.components.shape[1]

    @property
    def is_weighted(self) -> bool:
        return self.weights is not None

    def subset(self, rows) -> "RealizationBatch":
        rows = np.asarray(rows)
        w = None if self.weights is None else self.weights[rows]
        return RealizationBatch(self.components[rows], self.totals[rows], w, self.seed)

    def shifted(self, h: float) -> "RealizationBatch":
        """Batch of ``X + h``; the constant lands on the first asset."""
        comps = self.components.copy()
        comps[:, 0] += h
        return RealizationBatch(comps, self.totals + h, self.weights, self.seed)

    def scaled(self, h: float) -> "RealizationBatch":
        return RealizationBatch(self.components * h, self.totals * h, self.weights, self.seed)


@dataclass(frozen=True)
class SortedBatch:
    """A batch together with its ascending sort and the quantile position for ``alpha``.

    ``order`` sorts ``batch.totals`` ascending (stable), and
    ``batch.totals[order[level_index]]`` is ``-VaR_alpha``.
    """

    batch: RealizationBatch
    order: np.ndarray
    level_index: int
    alpha: float
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def sorted_totals(self) -> np.ndarray:
        return self.batch.totals[self.order]

    @property
    def level_value(self) -> float:
        return float(self.batch.totals[self.order[self.level_index]])


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _as_totals(x) -> np.ndarray:
    if isinstance(x, RealizationBatch):
        return x.totals
    return np.asarray(x, dtype=float).reshape(-1)


def min_count(alpha: float, m: int) -> int:
    """Smallest integer ``k`` with ``k / m >= alpha`` (robust to representation error)."""
    return max(0, math.ceil(alpha * m * (1.0 - _RANK_FUZZ)))


def level_index(alpha: float, m: int) -> int:
    """0-based ascending position of ``-VaR_alpha`` among ``m`` equally weighted realizations."""
    return min(max(m - min_count(alpha, m), 0), m - 1)


def tail_count(alpha: float, m: int) -> int:
    """Number of worst realizations whose total mass fits inside ``1 - alpha`` (at least one)."""
    return max(1, math.floor((1.0 - alpha) * m * (1.0 + _RANK_FUZZ)))


def _weighted_level(sorted_weights: np.ndarray, alpha: float) -> int:
    # rescale by the max so uniform weights become exact ones
    w = sorted_weights / sorted_weights.max()
    upper = np.cumsum(w[::-1])[::-1]
    hit = upper >= alpha * upper[0] * (1.0 - _RANK_FUZZ)
    return max(int(np.count_nonzero(hit)) - 1, 0)


def sort_batch(batch: RealizationBatch, alpha: float) -> SortedBatch:
    """Stable ascending sort of the totals and the VaR order-statistic position.

    Weighted batches use the importance-weighted position (``n_{alpha,IS}``).
    """
    _check_alpha(alpha)
    if batch.m == 0:
        raise ValueError("empty batch")
    order = np.argsort(batch.totals, kind="stable")
    if batch.weights is None:
        idx = level_index(alpha, batch.m)
    else:
        idx = _weighted_level(batch.weights[order], alpha)
    return SortedBatch(batch, order, idx, alpha)


def empirical_quantile(batch, alpha: float) -> float:
    """Inf-definition quantile ``q_alpha``: smallest order statistic with empirical CDF >= alpha."""
    _check_alpha(alpha)
    totals = _as_totals(batch)
    if totals.size == 0:
        raise ValueError("empty batch")
    k = max(min_count(alpha, totals.size) - 1, 0)
    return float(np.partition(totals, k)[k])


def weighted_quantile(batch: RealizationBatch, alpha: float) -> tuple[float, int]:
    """Importance-weighted lower-tail quantile used for ``VaR_alpha``.

    Realizations are sorted ascending and the returned position ``k`` is the
    largest one whose upper weight mass ``P(X >= X_(k))`` is still at least
    ``alpha``; ``-X_(k)`` is then the weighted ``VaR_alpha``.

    Returns
    -------
    value : float
        ``X_(k)``.
    index : int
        ``k``, the position in the sorted order.
    """
    _check_alpha(alpha)
    if batch.m == 0:
        raise ValueError("empty batch")
    if batch.weights is None:
        raise ValueError("batch carries no weights")
    w = batch.weights
    if not np.any(w > 0):
        raise NumericalError("weights are all zero")
    order = np.argsort(batch.totals, kind="stable")
    k = _weighted_level(w[order], alpha)
    return float(batch.totals[order[k]]), k


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    s = w.sum()
    return float(s * s / np.dot(w, w))


def band_filter(batch: RealizationBatch, d1: float, d2: float) -> RealizationBatch:
    """Keep only realizations with ``d1 <= total <= d2`` (storage-saving band)."""
    keep = np.flatnonzero((batch.totals >= d1) & (batch.totals <= d2))
    return batch.subset(keep)


def _fmt(x: float, digits: int = 17) -> str:
    return format(float(x), f".{digits}g")


def write_batch_csv(batch: RealizationBatch, path, digits: int = 17) -> Path:
    """CSV with header ``asset_1,...,asset_n,total,weight``; empty weight when unweighted."""
    path = Path(path)
    header = [f"asset_{i + 1}" for i in range(batch.n)] + ["total", "weight"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for j in range(batch.m):
            row = [_fmt(v, digits) for v in batch.components[j]]
            row.append(_fmt(batch.totals[j], digits))
            row.append("" if batch.weights is None else _fmt(batch.weights[j], digits))
            wr.writerow(row)
    return path


def read_batch_csv(path, seed: int | None = None) -> RealizationBatch:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = len(header) - 2
    if n < 1 or header[-2:] != ["total", "weight"]:
        raise ValueError("expected header asset_1,...,asset_n,total,weight")
    comps = np.array([[float(v) for v in r[:n]] for r in body], dtype=float).reshape(len(body), n)
    totals = np.array([float(r[n]) for r in body], dtype=float)
    wcol = [r[n + 1] for r in body]
    weights = None
    if body and all(v != "" for v in wcol):
        weights = np.array([float(v) for v in wcol])
    return RealizationBatch(comps, totals, weights, seed)
