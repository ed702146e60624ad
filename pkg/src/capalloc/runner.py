"""Execute scenarios: dispatch to the exact oracle or a simulation engine and write the requested files."""

from __future__ import annotations

import csv
import json
import platform
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .allocation import AllocationReport, allocate_with_stderr
from .config import ScenarioConfig
from .discrete import (DiscreteJointDistribution, check_allocation_monotonicity, es_exact, euler_alloc_es_exact,
                       euler_alloc_var_exact, fd_alloc, var_exact)
from .empirical import RealizationBatch, write_batch_csv
from .errors import ConfigError, NumericalError
from .estimators import ISConfig, MCConfig, MCMCConfig, estimate_is, estimate_mc, estimate_mcmc, write_trace_csv
from .measures import AXIOMS, RiskMeasure, check_axiom, evaluate
from .models import sample_portfolio
from .multiperiod import commitment_average, single_period_rorac_table

_REGIME = {"VaR": "VaR", "ES-tail": "ES", "ES-integral": "ES"}


@dataclass
class RunResult:
    report: AllocationReport | None = None
    files: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def exact_report(dist: DiscreteJointDistribution, measure: RiskMeasure) -> AllocationReport:
    """Enumerated risk and Euler allocation; falls back to finite differences when no atom sits at VaR."""
    means = dist.probs @ dist.values
    diag: dict = {}
    method = "exact"
    if measure.kind == "VaR":
        risk = var_exact(dist, None, measure.param)
        try:
            alloc = euler_alloc_var_exact(dist, measure.param)
        except NumericalError:
            alloc = fd_alloc(lambda u: var_exact(dist, u, measure.param), n=dist.n)
            method = "fd"
    elif measure.kind in ("ES-tail", "ES-integral"):
        form = "tail" if measure.kind == "ES-tail" else "integral"
        risk = es_exact(dist, None, measure.param, form)
        alloc = euler_alloc_es_exact(dist, measure.param, form)
    else:
        risk = evaluate(measure, dist)
        alloc = fd_alloc(lambda u: evaluate(measure, dist, u), n=dist.n)
        method = "fd"
    if dist.n > 1:
        diag["standalone_sum"] = float(sum(evaluate(measure, dist.column(i)) for i in range(dist.n)))
    return AllocationReport(risk, alloc, np.zeros(dist.n), means, method, measure.label, None, diag)


def _mc_config(eng: dict, alpha: float) -> MCConfig:
    return MCConfig(int(eng.get("m", 10**6)), int(eng.get("b", 1600)), alpha, eng.get("variant", "ratio"),
                    eng.get("stderr", "auto"), int(eng.get("n_batches", 10)))


def resolve_var_level(cfg: ScenarioConfig, seed: int, threads: int) -> tuple[float, str]:
    """MCMC needs VaR from elsewhere: a number in the config, or ``"mc"`` to estimate it first."""
    eng = cfg.engine
    lvl = eng.get("var_level", "mc")
    if isinstance(lvl, (int, float)) and not isinstance(lvl, bool):
        return float(lvl), "config"
    if lvl != "mc":
        raise ConfigError("engine.var_level must be a number or \"mc\"")
    mc = MCConfig(int(eng.get("var_m", 10**6)), int(eng.get("var_b", 0)), cfg.measure.param, stderr="none")
    return estimate_mc(cfg.spec, mc, seed, threads).risk, "mc"


def compute_report(cfg: ScenarioConfig, seed: int, threads: int, keep_batch: bool = False):
    """The scenario's allocation report (and, for in-memory engines, the batch it came from)."""
    kind = cfg.engine_kind
    meas = cfg.measure
    eng = cfg.engine
    if kind == "exact":
        return exact_report(cfg.distribution, meas), None, {}
    if meas.kind == "StdDevMultiple":
        raise ConfigError("simulation engines support VaR and ES only")
    spec = cfg.spec
    if kind == "mc":
        if meas.kind == "VaR" and not keep_batch:
            return estimate_mc(spec, _mc_config(eng, meas.param), seed, threads), None, {}
        batch = sample_portfolio(spec, int(eng.get("m", 10**6)), seed, threads)
        rep = allocate_with_stderr(batch, _REGIME[meas.kind], meas.param, int(eng.get("b", 1600)),
                                   spec.expected_returns(), int(eng.get("n_batches", 10)), eng.get("variant", "ratio"))
        if meas.kind == "ES-integral":
            from .allocation import alloc_es_tail
            from .empirical import sort_batch
            from .measures import es_empirical

            sb = sort_batch(batch, meas.param)
            rep = AllocationReport(es_empirical(sb, meas.param, "integral"), alloc_es_tail(sb, meas.param, "integral"),
                                   rep.stderr, rep.expected_returns, "MC", meas.label, None, rep.diagnostics)
        return rep, batch, {}
    if kind == "is":
        if meas.kind != "VaR":
            raise ConfigError("the importance sampler estimates VaR allocations only")
        icfg = ISConfig(int(eng.get("m", 10**6)), int(eng.get("b_is", 20000)), meas.param, eng.get("shift", 0.2),
                        eng.get("sigma_is"), eng.get("variant", "ratio"), bool(eng.get("weighted_band", True)),
                        eng.get("stderr", "auto"), int(eng.get("n_batches", 10)), hit_halfwidth=float(eng.get("hit_halfwidth", 0.05)))
        return estimate_is(spec, icfg, seed, threads), None, {}
    if kind == "mcmc":
        if meas.kind != "VaR":
            raise ConfigError("the level-set sampler estimates VaR allocations only")
        level, source = resolve_var_level(cfg, seed, threads)
        mcfg = MCMCConfig(int(eng.get("m", 100_000)), level, eng.get("thin"), float(eng.get("rho_prop", 0.3)),
                          eng.get("burn_in"), eng.get("ratio_mode", "jacobian"), int(eng.get("chains", 1)),
                          int(eng.get("trace_asset", 1)) - 1)
        run = estimate_mcmc(spec, mcfg, seed, threads, keep_chains=True)
        run.report.diagnostics["var_level_source"] = source
        return run.report, None, {"chains": run.chains}
    raise ConfigError(f"unknown engine {kind!r}")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_manifest(out: Path, cfg: ScenarioConfig, seed: int, threads: int, command: str, started: float,
                   files: list, summary: dict) -> Path:
    path = out / "manifest.json"
    doc = {
        "command": command,
        "scenario": cfg.name,
        "provenance": cfg.provenance,
        "config": str(cfg.path) if cfg.path else None,
        "config_sha256": cfg.config_hash,
        "seed": seed,
        "threads": threads,
        "versions": _versions(),
        "wall_time_s": round(time.perf_counter() - started, 3),
        "files": sorted(Path(f).name for f in files),
        "summary": _jsonable(summary),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def run_scenario(cfg: ScenarioConfig, out: Path, seed: int | None = None, threads: int = 1,
                 digits: int | None = None) -> RunResult:
    started = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    digits = cfg.digits if digits is None else digits
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult()
    if "table" in cfg.outputs or cfg.types:
        res = run_tables(cfg, out, seed, threads, digits)
        res.files.append(write_manifest(out, cfg, seed, threads, "run", started, res.files, res.extras.get("summary", {})))
        return res
    report, batch, extra = compute_report(cfg, seed, threads, keep_batch="batch" in cfg.outputs)
    res.report = report
    if "report_csv" in cfg.outputs:
        res.files.append(report.to_csv(out / "report.csv", digits))
    if "report_txt" in cfg.outputs:
        p = out / "report.txt"
        p.write_text(report.to_text(), encoding="utf-8")
        res.files.append(p)
    if "batch" in cfg.outputs and batch is not None:
        res.files.append(write_batch_csv(batch, out / "batch.csv", digits))
    chains = extra.get("chains")
    if chains and "trace" in cfg.outputs:
        res.files.append(write_trace_csv(chains[0], out / "trace.csv", digits))
    if chains and "figure" in cfg.outputs:
        from .plotting import plot_autocorrelation

        acf = [report.diagnostics[f"acf_lag{k}"] for k in range(1, 11)]
        res.files.append(plot_autocorrelation(acf, out / "autocorrelation.png"))
    res.files.append(write_manifest(out, cfg, seed, threads, "run", started, res.files, report.summary()))
    return res


def run_tables(cfg: ScenarioConfig, out: Path, seed: int, threads: int, digits: int) -> RunResult:
    """Single-period RORAC table and its commitment-period average."""
    eng = cfg.engine
    mp = cfg.raw.get("multiperiod", {})
    t1 = single_period_rorac_table(list(cfg.types), cfg.measure.kind if cfg.measure.kind != "ES-tail" else "ES",
                                   "mc", cfg.measure.param, int(eng.get("m", 10**6)), int(eng.get("b", 1000)),
                                   seed, threads, list(cfg.labels))
    t2 = commitment_average(t1, mp.get("next_probs"), int(mp.get("horizon", 2)))
    files = [t1.to_csv(out / "table_single_period.csv", digits), t2.to_csv(out / "table_commitment.csv", digits)]
    p = out / "tables.txt"
    p.write_text(t1.to_text() + "\n" + t2.to_text(), encoding="utf-8")
    files.append(p)
    summary = {"single_period": t1.values, "single_period_stderr": t1.stderr,
               "commitment": t2.values, "commitment_stderr": t2.stderr}
    return RunResult(None, files, {"table1": t1, "table2": t2, "summary": summary})


SWEEP_COLUMNS = ["u", "portfolio_rorac", "asset_1_rorac", "asset_2_rorac", "portfolio_risk", "asset_1_alloc",
                 "asset_2_alloc", "portfolio_rorac_stderr", "asset_1_rorac_stderr", "asset_2_rorac_stderr"]


def sweep_rows(cfg: ScenarioConfig, seed: int, threads: int = 1) -> dict[str, np.ndarray]:
    """RORAC curves over the weight grid, one array of rows per allocation regime.

    All grid points reuse the same draws (common random numbers); asset
    ``sweep.asset`` carries weight ``u`` and the other ``1 - u``.
    """
    sw = cfg.sweep
    if sw is None:
        raise ConfigError("config has no [sweep] section")
    spec = cfg.spec.with_weights(np.ones(2))
    eng = cfg.engine
    alpha = cfg.measure.param
    b = int(eng.get("b", 1000))
    base = sample_portfolio(spec, int(eng.get("m", 10**6)), seed, threads)
    means = spec.column_means()
    out = {r: [] for r in sw.regimes}
    for u in sw.grid:
        w = np.empty(2)
        w[sw.asset], w[1 - sw.asset] = u, 1.0 - u
        comps = base.components * w
        batch = RealizationBatch(comps, comps.sum(axis=1), None, seed)
        for r in sw.regimes:
            rep = allocate_with_stderr(batch, r, alpha, b, means * w, int(eng.get("n_batches", 10)))
            rs = rep.diagnostics["rorac_stderr"]
            out[r].append([u, rep.portfolio_rorac, rep.roracs[0], rep.roracs[1], rep.risk, rep.allocations[0],
                           rep.allocations[1], rep.diagnostics["portfolio_rorac_stderr"], rs[0], rs[1]])
    return {r: np.array(v, dtype=float) for r, v in out.items()}


def run_sweep(cfg: ScenarioConfig, out: Path, seed: int | None = None, threads: int = 1,
              digits: int | None = None) -> RunResult:
    started = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    digits = cfg.digits if digits is None else digits
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_rows(cfg, seed, threads)
    files = []
    summary = {}
    for regime, arr in rows.items():
        tag = regime.replace("-", "_")
        p = out / f"sweep_{tag}.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(SWEEP_COLUMNS)
            for row in arr:
                wr.writerow([format(float(v), f".{digits}g") for v in row])
        files.append(p)
        if "figure" in cfg.outputs:
            from .plotting import plot_sweep

            files.append(plot_sweep(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], regime, out / f"sweep_{tag}.png"))
        best = int(np.nanargmax(arr[:, 1]))
        summary[regime] = {"argmax_u": arr[best, 0], "portfolio_rorac": arr[best, 1],
                           "asset_1_rorac": arr[best, 2], "asset_2_rorac": arr[best, 3]}
    files.append(write_manifest(out, cfg, seed, threads, "sweep", started, files, summary))
    return RunResult(None, files, {"rows": rows, "summary": summary})


def axiom_checks(dist: DiscreteJointDistribution, measure: RiskMeasure) -> list[dict]:
    """Every axiom on the scenario's distribution, plus allocation monotonicity for two-asset laws."""
    rows = []
    for ax in AXIOMS:
        if ax in ("monotonous", "subadditive") and dist.n != 2:
            continue
        if ax == "law_invariant":
            perm = np.arange(dist.size)[::-1]
            ev = (dist, DiscreteJointDistribution(dist.values[perm], dist.probs[perm]))
            res = check_axiom(measure, ax, ev)
        elif ax == "positive_homogeneous":
            res = check_axiom(measure, ax, dist, [0.5, 2.0, 3.0])
        elif ax == "translation_invariant":
            res = check_axiom(measure, ax, dist, [-1.0, 2.5])
        else:
            res = check_axiom(measure, ax, dist)
        rows.append({"check": ax, "passed": res.passed, "instances": res.instances,
                     "detail": "" if res.counterexample is None else json.dumps(_jsonable(res.counterexample), sort_keys=True)})
    if dist.n == 2 and measure.kind in ("VaR", "ES-tail", "ES-integral"):
        for i, j in ((0, 1), (1, 0)):
            mc = check_allocation_monotonicity(dist, measure.param, i, j, measure.kind)
            if mc.dominance:
                rows.append({"check": f"allocation_monotonicity_{i + 1}_{j + 1}", "passed": not mc.violated,
                             "instances": 1, "detail": json.dumps({"allocations": _jsonable(mc.allocations)})})
    return rows


def run_axioms(cfg: ScenarioConfig, out: Path, seed: int | None = None, threads: int = 1,
               digits: int | None = None) -> RunResult:
    started = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    rows = axiom_checks(cfg.distribution, cfg.measure)
    p = out / "axioms.csv"
    with p.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, ["check", "passed", "instances", "detail"], lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow(r)
    files = [p]
    files.append(write_manifest(out, cfg, cfg.seed if seed is None else seed, threads, "axioms", started, files,
                                {r["check"]: r["passed"] for r in rows}))
    return RunResult(None, files, {"rows": rows})
