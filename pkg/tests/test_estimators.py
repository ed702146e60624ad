import csv
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate, stats

from capalloc.allocation import alloc_var_band
from capalloc.empirical import sort_batch
from capalloc.errors import ConfigError, NumericalError
from capalloc.estimators import (ISConfig, MCConfig, MCMCConfig, count_operations, estimate_is, estimate_mc,
                                 estimate_mcmc, instrumented_mcmc_ops, instrumented_sampling_ops, run_chain,
                                 write_trace_csv)
from capalloc.estimators.mcmc import autocorrelation, batch_means_stderr
from capalloc.measures import var_empirical
from capalloc.models import DiscreteAsset, PortfolioSpec, ShiftedLognormalAsset, example5_spec, sample_portfolio

SMALL = example5_spec(reference_mu=0.44, group_size=3)


# Monte Carlo

def test_mc_config_validation():
    with pytest.raises(ConfigError):
        MCConfig(100, 60)
    with pytest.raises(ConfigError):
        MCConfig(1000, 5, alpha=1.0)
    with pytest.raises(ConfigError):
        MCConfig(1000, 5, stderr="bootstrap")


def test_two_pass_matches_in_memory_pipeline():
    m, b = 200_000, 150
    rep = estimate_mc(SMALL, MCConfig(m, b), seed=17)
    sb = sort_batch(sample_portfolio(SMALL, m, seed=17), 0.99)
    assert rep.risk == var_empirical(sb, 0.99)
    assert np.array_equal(rep.allocations, alloc_var_band(sb, b))


def test_mc_thread_invariance():
    r1 = estimate_mc(SMALL, MCConfig(150_000, 100), seed=3, threads=1)
    r3 = estimate_mc(SMALL, MCConfig(150_000, 100), seed=3, threads=3)
    assert r1.risk == r3.risk and np.array_equal(r1.allocations, r3.allocations)
    assert np.array_equal(r1.stderr, r3.stderr)


def test_single_asset_band_zero_is_var():
    spec = PortfolioSpec((ShiftedLognormalAsset(2.0, 0.4, 0.5),))
    rep = estimate_mc(spec, MCConfig(10_000, 0), seed=1)
    assert rep.allocations[0] == rep.risk


def test_example1_by_simulation():
    spec = PortfolioSpec((DiscreteAsset((0.0, -200.0), (0.9925, 0.0075)), DiscreteAsset((0.0, -100.0), (0.9925, 0.0075))))
    rep = estimate_mc(spec, MCConfig(1_000_000, 20, variant="plain"), seed=2)
    assert rep.risk == 100.0
    assert np.allclose(rep.allocations, [0.0, 100.0])


def test_mc_grouped_stderr_and_op_counts():
    rep = estimate_mc(SMALL, MCConfig(100_000, 100), seed=5)
    assert rep.diagnostics["stderr_mode"] == "grouped"
    assert rep.diagnostics["ops_var_instrumented"] == 5 * SMALL.n
    assert rep.diagnostics["ops_var_analytic"] == 3 * SMALL.n


# importance sampling

def test_is_zero_shift_is_bit_exact_mc():
    mc = estimate_mc(SMALL, MCConfig(120_000, 80), seed=9)
    is0 = estimate_is(SMALL, ISConfig(120_000, 80, shift=0.0), seed=9)
    assert mc.risk == is0.risk
    assert np.array_equal(mc.allocations, is0.allocations)
    assert np.array_equal(mc.stderr, is0.stderr)


def test_is_degenerate_weights_raise():
    with pytest.raises(NumericalError, match="smaller shift"):
        estimate_is(example5_spec(reference_mu=0.44), ISConfig(50_000, 100, shift=1.0, min_ess=1000), seed=1)


def test_is_requires_lognormal_assets():
    spec = PortfolioSpec((DiscreteAsset((0.0, 1.0), (0.5, 0.5)),) * 2)
    with pytest.raises(ConfigError):
        estimate_is(spec, ISConfig(1000, 5), seed=1)


def test_is_agrees_with_mc_on_a_small_portfolio():
    # few assets keep the likelihood ratio well behaved
    spec = PortfolioSpec(tuple(ShiftedLognormalAsset(2.0, 0.45, 0.5) for _ in range(3)))
    mc = estimate_mc(spec, MCConfig(1_000_000, 1000, stderr="batches"), seed=1)
    is_ = estimate_is(spec, ISConfig(200_000, 2000, shift=0.3, stderr="batches"), seed=2)
    assert is_.risk == pytest.approx(mc.risk, rel=0.01)
    assert is_.diagnostics["band_hit_ratio"] > 2
    assert np.allclose(is_.allocations, mc.allocations, atol=4 * np.hypot(is_.stderr, mc.stderr).max())


# MCMC

def level_set_density(assets, var_level):
    """Conditional law of e_1 on {e_1 + e_2 = C}, normalised by quadrature."""
    a = np.array([x.a for x in assets])
    total = a.sum() + var_level
    f1 = stats.lognorm(s=assets[0].sigma, scale=math.exp(assets[0].mu)).pdf
    f2 = stats.lognorm(s=assets[1].sigma, scale=math.exp(assets[1].mu)).pdf
    z, _ = integrate.quad(lambda e: f1(e) * f2(total - e), 0, total, limit=200)
    return (lambda e: f1(e) * f2(total - e) / z), total, a


def test_mcmc_two_assets_quadrature_oracle():
    assets = (ShiftedLognormalAsset(2.0, 0.3, 0.5), ShiftedLognormalAsset(2.5, 0.5, 0.4))
    var = 3.0
    dens, total, a = level_set_density(assets, var)
    mean_e1, _ = integrate.quad(lambda e: e * dens(e), 0, total, limit=200)
    truth = np.array([mean_e1 - a[0], total - mean_e1 - a[1]])
    rep = estimate_mcmc(PortfolioSpec(assets), MCMCConfig(40_000, var), seed=4)
    se = rep.diagnostics["batch_means_stderr"]
    assert np.all(np.abs(rep.allocations - truth) <= 3 * se)
    assert rep.allocations.sum() == pytest.approx(var, rel=1e-12)


def test_mcmc_two_assets_total_variation():
    assets = (ShiftedLognormalAsset(2.0, 0.3, 0.5), ShiftedLognormalAsset(2.5, 0.5, 0.4))
    var = 3.0
    dens, total, a = level_set_density(assets, var)
    res = run_chain(PortfolioSpec(assets), MCMCConfig(40_000, var), seed=6)
    e1 = a[0] - res.samples[:, 0]
    edges = np.linspace(0, total, 41)
    emp = np.histogram(e1, edges)[0] / e1.size
    ref = np.array([integrate.quad(dens, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    assert 0.5 * np.abs(emp - ref).sum() <= 0.05


def test_mcmc_three_assets_grid_oracle():
    assets = (ShiftedLognormalAsset(2.0, 0.3, 0.5), ShiftedLognormalAsset(2.5, 0.5, 0.4),
              ShiftedLognormalAsset(1.5, 0.1, 0.6))
    var = 4.0
    a = np.array([x.a for x in assets])
    total = a.sum() + var
    pdfs = [stats.lognorm(s=x.sigma, scale=math.exp(x.mu)).pdf for x in assets]
    g = (np.arange(1200) + 0.5) * total / 1200
    e1, e2 = np.meshgrid(g, g, indexing="ij")
    e3 = total - e1 - e2
    w = np.where(e3 > 0, pdfs[0](e1) * pdfs[1](e2) * pdfs[2](np.clip(e3, 1e-300, None)), 0.0)
    w /= w.sum()
    truth = np.array([(w * e1).sum(), (w * e2).sum(), (w * np.clip(e3, 0, None)).sum()]) - a
    rep = estimate_mcmc(PortfolioSpec(assets), MCMCConfig(40_000, var), seed=5)
    se = rep.diagnostics["batch_means_stderr"]
    assert np.all(np.abs(rep.allocations - truth) <= 3 * se)


def test_mcmc_identical_assets_symmetric():
    asset = ShiftedLognormalAsset(2.0, 0.45, 0.5)
    rep = estimate_mcmc(PortfolioSpec((asset, asset)), MCMCConfig(30_000, 2.5), seed=2)
    se = rep.diagnostics["batch_means_stderr"]
    assert abs(rep.allocations[0] - rep.allocations[1]) <= 3 * math.hypot(*se)
    assert rep.allocations.sum() == pytest.approx(2.5, rel=1e-12)


def test_mcmc_states_stay_on_level_set():
    rep = estimate_mcmc(SMALL, MCMCConfig(5000, 1.5), seed=1)
    assert rep.diagnostics["max_level_deviation"] <= 1e-8
    assert 0 < rep.diagnostics["acceptance"] < 1


def test_mcmc_deterministic_and_multi_chain():
    cfg = MCMCConfig(2000, 1.5, chains=3)
    r1 = estimate_mcmc(SMALL, cfg, seed=7, threads=1)
    r2 = estimate_mcmc(SMALL, cfg, seed=7, threads=3)
    assert np.array_equal(r1.allocations, r2.allocations)
    assert r1.diagnostics["between_chain_sd"].shape == (SMALL.n,)


def test_mcmc_literal_mode_runs():
    rep = estimate_mcmc(SMALL, MCMCConfig(3000, 1.5, ratio_mode="literal"), seed=1)
    assert rep.diagnostics["ratio_mode"] == "literal"
    assert rep.allocations.sum() == pytest.approx(1.5, rel=1e-12)


def test_mcmc_config_validation():
    with pytest.raises(ConfigError):
        MCMCConfig(10, 1.0, rho_prop=1.0)
    with pytest.raises(ConfigError):
        MCMCConfig(10, 1.0, ratio_mode="other")
    with pytest.raises(ConfigError):
        run_chain(PortfolioSpec((ShiftedLognormalAsset(2.0, 0.4, 0.5),)), MCMCConfig(10, 1.0), seed=1)


def test_trace_csv(tmp_path):
    res = run_chain(SMALL, MCMCConfig(50, 1.5), seed=1)
    rows = list(csv.reader(write_trace_csv(res, tmp_path / "t.csv").open()))
    assert rows[0] == ["step", "accepted", "total", "asset_k1", "asset_k2"]
    assert len(rows) == 51
    assert all(float(r[2]) == pytest.approx(-1.5, rel=1e-10) for r in rows[1:])


def test_autocorrelation_and_batch_means():
    rng = np.random.default_rng(0)
    x = rng.normal(size=100_000)
    assert np.all(np.abs(autocorrelation(x, 5)) < 0.02)
    ar = np.empty(100_000)
    ar[0] = 0
    for t in range(1, ar.size):
        ar[t] = 0.5 * ar[t - 1] + rng.normal()
    assert autocorrelation(ar, 2) == pytest.approx([0.5, 0.25], abs=0.02)
    se = batch_means_stderr(x[:, None], 20)[0]
    assert se == pytest.approx(1 / math.sqrt(x.size), rel=0.5)


# operation counts

def test_analytic_counts():
    assert count_operations("MC", 90, 1600).var == 270
    assert count_operations("MC", 90, 1600).alloc == Fraction(270, 3201)
    assert count_operations("IS", 90, 20000).alloc == Fraction(540, 40001)
    assert count_operations("MCMC", 17).alloc == 9
    with pytest.raises(ValueError):
        count_operations("QMC", 10, 1)


def test_instrumented_counts_within_factor_two():
    n = 20
    assert 0.5 <= instrumented_sampling_ops(n) / (3 * n) <= 2
    assert 0.5 <= instrumented_sampling_ops(n, shift=0.2) / (6 * n) <= 2
    assert 0.5 <= instrumented_mcmc_ops(n) / 9 <= 2
