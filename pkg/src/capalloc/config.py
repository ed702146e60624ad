"""TOML scenario files: parsing, validation against a fixed schema and model construction."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .discrete import DiscreteJointDistribution, example2_distribution, product_distribution
from .errors import ConfigError
from .measures import RiskMeasure
from .models import (BernoulliParetoAsset, ConstantAsset, DiscreteAsset, Example2Pair, PortfolioSpec,
                     ShiftedLognormalAsset)

SCHEMA: dict[str, set] = {
    "": {"name", "provenance", "seed", "portfolio", "measure", "engine", "sweep", "multiperiod", "outputs", "checks"},
    "portfolio": {"kind", "assets", "marginals", "csv", "weights", "grid_points"},
    "portfolio.assets": {"type", "count", "group", "mu", "sigma", "a", "target_mean", "a_reference_mu",
                         "gamma", "b", "p_loss", "base", "value", "values", "probs", "scale", "half_width", "name"},
    "portfolio.marginals": {"values", "probs"},
    "measure": {"kind", "alpha", "multiplier", "form"},
    "engine": {"kind", "m", "b", "b_is", "shift", "sigma_is", "variant", "weighted_band", "stderr", "n_batches",
               "hit_halfwidth", "var_level", "var_m", "var_b", "thin", "rho_prop", "burn_in", "ratio_mode",
               "chains", "trace_asset"},
    "sweep": {"asset", "start", "stop", "points", "values", "regimes"},
    "multiperiod": {"types", "labels", "horizon", "next_probs"},
    "outputs": {"files", "digits"},
    "checks": {"criteria"},
}
ASSET_TYPES = ("shifted_lognormal", "bernoulli_pareto", "constant", "discrete", "example2_pair")
ENGINES = ("exact", "mc", "is", "mcmc")
PORTFOLIO_KINDS = ("assets", "discrete", "example2")


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*(\[+\s*)?{re.escape(key.split('.')[-1])}\s*(=|\]|\.)")
    inline = re.compile(rf"[{{,]\s*{re.escape(key.split('.')[-1])}\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.search(line) or inline.search(line):
            return i
    return None


def _check_keys(obj: dict, section: str, text: str) -> None:
    allowed = SCHEMA[section]
    for k, v in obj.items():
        path = f"{section}.{k}" if section else k
        if k not in allowed:
            line = _line_of(text, k)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"unknown key '{path}'{where}")
        sub = path
        if sub in SCHEMA:
            items = v if isinstance(v, list) else [v]
            for it in items:
                if not isinstance(it, dict):
                    raise ConfigError(f"'{path}' must be a table")
                _check_keys(it, sub, text)


@dataclass
class SweepSpec:
    asset: int
    grid: np.ndarray
    regimes: tuple


@dataclass
class ScenarioConfig:
    """A validated scenario: what to build, which measure and engine, and what to write."""

    name: str
    provenance: str
    seed: int
    measure: RiskMeasure
    engine: dict
    raw: dict
    source: str
    path: Path | None = None
    sweep: SweepSpec | None = None
    outputs: tuple = ("report_csv", "report_txt")
    digits: int = 17
    portfolio_kind: str = "assets"
    _spec: PortfolioSpec | None = field(default=None, repr=False)
    _dist: DiscreteJointDistribution | None = field(default=None, repr=False)
    types: tuple = ()
    labels: tuple = ()
    criteria: tuple = ()

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()

    @property
    def engine_kind(self) -> str:
        return self.engine.get("kind", "exact" if self._dist is not None else "mc")

    @property
    def spec(self) -> PortfolioSpec:
        if self._spec is None:
            raise ConfigError(f"scenario '{self.name}' has no parametric portfolio")
        return self._spec

    @property
    def distribution(self) -> DiscreteJointDistribution:
        if self._dist is None:
            raise ConfigError(f"scenario '{self.name}' has no discrete portfolio")
        return self._dist

    @property
    def has_spec(self) -> bool:
        return self._spec is not None

    @property
    def has_distribution(self) -> bool:
        return self._dist is not None


def _num(d: dict, key: str, default=None, where: str = ""):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"missing key '{where}{key}'")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{where}{key}' must be a number")
    return v


def build_asset(entry: dict):
    t = entry.get("type")
    w = "portfolio.assets."
    if t == "shifted_lognormal":
        mu, sigma = _num(entry, "mu", where=w), _num(entry, "sigma", where=w)
        if "a" in entry:
            return ShiftedLognormalAsset(_num(entry, "a", where=w), mu, sigma)
        return ShiftedLognormalAsset.calibrated(mu, sigma, _num(entry, "target_mean", where=w),
                                                entry.get("a_reference_mu"))
    if t == "bernoulli_pareto":
        gamma = _num(entry, "gamma", where=w)
        p, base = entry.get("p_loss", 0.1), entry.get("base", 0.5)
        if "b" in entry:
            return BernoulliParetoAsset(gamma, _num(entry, "b", where=w), p, base)
        return BernoulliParetoAsset.calibrated(gamma, _num(entry, "target_mean", where=w), p, base)
    if t == "constant":
        return ConstantAsset(_num(entry, "value", where=w))
    if t == "discrete":
        return DiscreteAsset(tuple(entry["values"]), tuple(entry["probs"]))
    if t == "example2_pair":
        return Example2Pair(entry.get("scale", 3.0), entry.get("half_width", 1.0))
    raise ConfigError(f"unknown asset type {t!r}; expected one of {ASSET_TYPES}")


def _build_assets(entries: list) -> tuple[tuple, tuple, tuple]:
    assets, groups, names = [], [], []
    for idx, e in enumerate(entries):
        count = int(e.get("count", 1))
        if count < 1:
            raise ConfigError("asset count must be positive")
        asset = build_asset(e)
        g = e.get("group", idx + 1)
        assets += [asset] * count
        groups += [g] * (count * asset.columns)
        names += [e.get("name", f"asset_{idx + 1}")] * (count * asset.columns)
    return tuple(assets), tuple(groups), tuple(names)


def parse_config(text: str, path: Path | None = None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    _check_keys(raw, "", text)
    if "provenance" not in raw:
        raise ConfigError("missing required key 'provenance'")
    name = raw.get("name", path.stem if path else "scenario")
    seed = int(raw.get("seed", 1))
    m = raw.get("measure", {})
    kind = m.get("kind", "VaR")
    param = m.get("multiplier", 1.0) if kind == "StdDevMultiple" else m.get("alpha", 0.99)
    try:
        measure = RiskMeasure(kind, float(param))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    engine = dict(raw.get("engine", {}))
    if "kind" in engine and engine["kind"] not in ENGINES:
        raise ConfigError(f"unknown engine {engine['kind']!r}; expected one of {ENGINES}")
    pf = raw.get("portfolio")
    if not pf:
        raise ConfigError("no assets")
    pkind = pf.get("kind", "assets")
    if pkind not in PORTFOLIO_KINDS:
        raise ConfigError(f"unknown portfolio kind {pkind!r}")
    spec = dist = None
    types: tuple = ()
    weights = pf.get("weights")
    if pkind == "discrete":
        if "csv" in pf:
            p = Path(pf["csv"])
            if not p.is_absolute() and path is not None:
                p = path.parent / p
            dist = DiscreteJointDistribution.from_csv(p)
        else:
            marg = pf.get("marginals") or []
            if not marg:
                raise ConfigError("no assets")
            dist = product_distribution([(mm["values"], mm["probs"]) for mm in marg])
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            if w.size != dist.n:
                raise ConfigError("weights length does not match asset count")
            dist = dist.with_columns(dist.values * w)
    elif pkind == "example2":
        dist = example2_distribution(int(pf.get("grid_points", 101)))
        spec = PortfolioSpec((Example2Pair(),), weights, None, ("3X_1", "X_2"))
    else:
        entries = pf.get("assets") or []
        if not entries:
            raise ConfigError("no assets")
        assets, groups, names = _build_assets(entries)
        try:
            spec = PortfolioSpec(assets, weights, groups, names)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        if "values" in sw:
            grid = np.asarray(sw["values"], dtype=float)
        else:
            grid = np.linspace(float(sw.get("start", 0.0)), float(sw.get("stop", 1.0)), int(sw.get("points", 21)))
        if grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > 1:
            raise ConfigError("sweep grid must be strictly increasing inside [0, 1]")
        regimes = tuple(sw.get("regimes", ("VaR", "ES", "VaR-ES")))
        for r in regimes:
            if r not in ("VaR", "ES", "VaR-ES"):
                raise ConfigError(f"unknown sweep regime {r!r}")
        sweep = SweepSpec(int(sw.get("asset", 1)) - 1, grid, regimes)
        if spec is None or spec.n != 2:
            raise ConfigError("a sweep needs exactly two assets")
    labels: tuple = ()
    if "multiperiod" in raw:
        mp = raw["multiperiod"]
        if spec is None:
            raise ConfigError("multiperiod needs parametric assets")
        idx = mp.get("types", list(range(1, len(spec.assets) + 1)))
        try:
            types = tuple(spec.assets[i - 1] for i in idx)
        except IndexError:
            raise ConfigError("multiperiod types reference a missing asset") from None
        labels = tuple(mp.get("labels", [f"X_{i}" for i in idx]))
    out = raw.get("outputs", {})
    files = tuple(out.get("files", ("report_csv", "report_txt")))
    checks = tuple(raw.get("checks", {}).get("criteria", ()))
    return ScenarioConfig(name, raw["provenance"], seed, measure, engine, raw, text, path, sweep, files,
                          int(out.get("digits", 17)), pkind, spec, dist, types, labels, checks)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def bundled_config_dir() -> Path:
    return Path(__file__).with_name("configs")


def bundled_configs() -> list[Path]:
    return sorted(bundled_config_dir().glob("*.toml"))
