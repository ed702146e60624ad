import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from capalloc.models import (CHUNK_ROWS, BernoulliParetoAsset, ConstantAsset, Example2Pair, OpCounter, PortfolioSpec,
                             ShiftedLognormalAsset, calibrate_a, calibrate_pareto_scale, draw_chunk, example3_assets,
                             example5_spec, log_density_Y, log_likelihood_ratio, sample_portfolio)


def test_calibrate_a_degenerate_limit():
    assert calibrate_a(0.0, 0.0, 0.2) == pytest.approx(1.2)


def test_calibrate_a_example5_value():
    a = calibrate_a(0.45, 0.5, 0.2)
    assert a == pytest.approx(0.2 + math.exp(0.575))
    assert a == pytest.approx(1.977, abs=5e-4)


def test_calibrated_lognormal_mean_by_simulation():
    asset = ShiftedLognormalAsset.calibrated(0.45, 0.5, 0.2)
    x = sample_portfolio(PortfolioSpec((asset,)), 1_000_000, seed=21).totals
    assert abs(x.mean() - 0.2) < 3 * x.std() / math.sqrt(x.size)


def test_lognormal_mean_matches_scipy():
    asset = ShiftedLognormalAsset(2.0, 0.3, 0.7)
    ref = 2.0 - stats.lognorm(s=0.7, scale=math.exp(0.3)).mean()
    assert asset.mean() == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("gamma,b", [(5.0, 12.0), (1.7, 2.1)])
def test_pareto_scale_closed_form(gamma, b):
    assert calibrate_pareto_scale(gamma, 0.1, 0.5, 0.2) == pytest.approx(b)


@pytest.mark.parametrize("gamma", [5.0, 1.7])
def test_pareto_mean_by_quadrature(gamma):
    b = calibrate_pareto_scale(gamma, 0.1, 0.5, 0.2)
    dens = lambda y: gamma / b * (y / b + 1.0) ** (-gamma - 1.0)  # noqa: E731
    mass, _ = integrate.quad(dens, 0, np.inf)
    mean, _ = integrate.quad(lambda y: y * dens(y), 0, np.inf, limit=500)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert 0.5 - 0.1 * mean == pytest.approx(0.2, abs=1e-6)
    assert BernoulliParetoAsset(gamma, b).mean() == pytest.approx(0.2)


def test_pareto_degenerate_scale_rejected():
    with pytest.raises(ValueError):
        calibrate_pareto_scale(2.0, 0.1, 0.5, 0.5)


def test_loss_event_frequency():
    spec = PortfolioSpec(example3_assets())
    comps = sample_portfolio(spec, 1_000_000, seed=8).components
    freq = np.mean(comps < 0.5, axis=0)
    se = math.sqrt(0.1 * 0.9 / comps.shape[0])
    assert np.all(np.abs(freq - 0.1) < 3 * se)


def test_pareto_tail_matches_scipy_lomax():
    asset = BernoulliParetoAsset(1.7, 2.1)
    comps = sample_portfolio(PortfolioSpec((asset,)), 400_000, seed=2).components[:, 0]
    y = 0.5 - comps[comps < 0.5]
    res = stats.kstest(y, stats.lomax(c=1.7, scale=2.1).cdf)
    assert res.pvalue > 1e-3


def test_zero_weights_give_zero_totals():
    spec = PortfolioSpec(example3_assets(), (0.0, 0.0))
    assert np.all(sample_portfolio(spec, 1000, seed=1).totals == 0.0)


def test_log_density_at_mode():
    asset = ShiftedLognormalAsset(1.0, 0.4, 0.6)
    assert log_density_Y(asset, 0.4) == pytest.approx(-math.log(0.6 * math.sqrt(2 * math.pi)))
    assert log_density_Y(asset, 1.3) == pytest.approx(stats.norm(0.4, 0.6).logpdf(1.3))


@given(st.floats(-0.5, 0.5), st.floats(0.2, 1.5), st.floats(0.2, 1.5))
def test_log_likelihood_ratio_matches_scipy(shift, sigma, sigma_is):
    y = np.random.default_rng(0).normal(size=(4, 3))
    mu = np.array([0.1, 0.4, -0.2])
    s = np.full(3, sigma)
    for sp in (s, np.full(3, sigma_is)):
        got = log_likelihood_ratio(y, mu, s, mu + shift, sp)
        ref = (stats.norm(mu, s).logpdf(y) - stats.norm(mu + shift, sp).logpdf(y)).sum(axis=1)
        assert np.allclose(got, ref, atol=1e-10)


def test_sampling_is_deterministic_and_thread_invariant():
    spec = example5_spec(group_size=2)
    m = 2 * CHUNK_ROWS + 17
    b1 = sample_portfolio(spec, m, seed=99, threads=1)
    b2 = sample_portfolio(spec, m, seed=99, threads=3)
    assert np.array_equal(b1.components, b2.components)
    assert not np.array_equal(b1.components, sample_portfolio(spec, m, seed=100).components)


def test_whole_chunks_do_not_depend_on_sample_size():
    for spec in (PortfolioSpec(example3_assets()), example5_spec(group_size=1)):
        small = sample_portfolio(spec, CHUNK_ROWS + 5, seed=4)
        big = sample_portfolio(spec, 3 * CHUNK_ROWS, seed=4)
        assert np.array_equal(small.components[:CHUNK_ROWS], big.components[:CHUNK_ROWS])


def test_lognormal_rows_are_prefix_stable():
    spec = example5_spec(group_size=1)
    assert np.array_equal(sample_portfolio(spec, 1000, seed=4).components,
                          sample_portfolio(spec, 5000, seed=4).components[:1000])


def test_zero_shift_proposal_is_the_plain_draw():
    spec = example5_spec(group_size=2)
    c0, t0, w0 = draw_chunk(spec, 5, 0, 100)
    c1, t1, w1 = draw_chunk(spec, 5, 0, 100, shift=0.0)
    assert np.array_equal(c0, c1) and np.array_equal(t0, t1)
    assert w0 is None and not np.any(w1)


def test_op_counter_per_row():
    spec = example5_spec(group_size=10)
    ctr = OpCounter()
    draw_chunk(spec, 1, 0, 50, counter=ctr)
    assert ctr.total / 50 == 5 * spec.n


def test_example2_pair_draws_coupled_columns():
    comps = sample_portfolio(PortfolioSpec((Example2Pair(),)), 20000, seed=3).components
    x1 = comps[:, 0] / 3.0
    assert np.allclose(comps[:, 1], np.where(x1 <= 0, -x1, -2 * x1))
    assert comps[:, 1].mean() == pytest.approx(-0.25, abs=0.01)


def test_weights_length_checked():
    with pytest.raises(ValueError):
        PortfolioSpec((ConstantAsset(1.0),), (1.0, 2.0))


def test_example5_groups():
    spec = example5_spec(reference_mu=0.44)
    assert spec.n == 90 and sorted(set(spec.groups)) == [1, 2, 3]
    a, mu, s = spec.lognormal_params()
    assert np.all(a == a[0])
    literal = example5_spec()
    assert np.allclose(literal.column_means(), 0.2)
