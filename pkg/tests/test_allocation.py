import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capalloc.allocation import (AllocationReport, alloc_blend_var_es, alloc_es_tail, alloc_var_band, allocate_batch,
                                  allocate_with_stderr, check_rorac_compatibility, grouped_spread, linear_evaluator,
                                  rorac)
from capalloc.empirical import RealizationBatch, sort_batch
from capalloc.errors import NumericalError
from capalloc.measures import es_empirical, var_empirical
from capalloc.models import DiscreteAsset, PortfolioSpec, example3_assets, sample_portfolio


def gaussian_batch(m=5000, n=3, seed=0):
    rng = np.random.default_rng(seed)
    return RealizationBatch.from_components(rng.normal(size=(m, n)) - 1.0)


def test_band_zero_takes_the_conditioning_row():
    b = gaussian_batch()
    sb = sort_batch(b, 0.99)
    row = b.components[sb.order[sb.level_index]]
    assert np.array_equal(alloc_var_band(sb, 0, "plain"), -row)
    assert np.allclose(alloc_var_band(sb, 0, "ratio"), -row, rtol=1e-14)


@given(st.integers(0, 1000), st.integers(0, 40))
def test_ratio_band_allocates_fully(seed, b):
    batch = gaussian_batch(2000, 4, seed)
    sb = sort_batch(batch, 0.95)
    assert alloc_var_band(sb, b).sum() == pytest.approx(var_empirical(sb, 0.95), rel=1e-12)


def test_band_out_of_range():
    sb = sort_batch(gaussian_batch(100), 0.99)
    with pytest.raises(ValueError):
        alloc_var_band(sb, 5)


def test_zero_total_in_band_needs_plain_variant():
    comps = np.array([[1.0, -1.0]] * 5 + [[-2.0, -1.0]] * 5)
    sb = sort_batch(RealizationBatch.from_components(comps), 0.5)
    with pytest.raises(NumericalError):
        alloc_var_band(sb, 1)
    assert np.isfinite(alloc_var_band(sb, 1, "plain")).all()


def test_example1_sampled_allocation():
    spec = PortfolioSpec((DiscreteAsset((0.0, -200.0), (0.9925, 0.0075)), DiscreteAsset((0.0, -100.0), (0.9925, 0.0075))))
    batch = sample_portfolio(spec, 1_000_000, seed=11)
    sb = sort_batch(batch, 0.99)
    assert np.allclose(alloc_var_band(sb, 10, "plain"), [0.0, 100.0])


def test_es_tail_single_asset_equals_es():
    b = gaussian_batch(3000, 1)
    sb = sort_batch(b, 0.9)
    assert alloc_es_tail(sb)[0] == pytest.approx(es_empirical(sb, 0.9, "tail"))
    assert alloc_es_tail(sb, form="integral")[0] == pytest.approx(es_empirical(sb, 0.9, "integral"))


def test_es_tail_identical_columns_equal():
    x = np.random.default_rng(3).normal(size=4000)
    sb = sort_batch(RealizationBatch.from_components(np.stack([x, x], axis=1)), 0.95)
    a = alloc_es_tail(sb)
    assert a[0] == a[1]


def test_blend_examples():
    assert alloc_blend_var_es([2, 2], 4, 3).tolist() == [1.5, 1.5]
    assert alloc_blend_var_es([1.0, 2.5], 3.5, 3.5).tolist() == [1.0, 2.5]
    with pytest.raises(NumericalError):
        alloc_blend_var_es([1.0], 0.0, 1.0)


def test_rorac_arithmetic():
    r = rorac([0.2, 0.2], [4, 2], 0.4, 6)
    assert r.asset.tolist() == [0.05, 0.1]
    assert r.portfolio == pytest.approx(0.0667, abs=5e-5)


def test_rorac_flags_negative_and_zero():
    r = rorac([0.1, 0.1, 0.1], [2.0, -1.0, 0.0], 0.3, 1.0)
    assert r.negative.tolist() == [False, True, False]
    assert np.isnan(r.asset[2])
    with pytest.raises(NumericalError):
        rorac([0.1], [1.0], 0.1, 0.0)


def test_compatibility_on_linear_model():
    ev = linear_evaluator([1.0, 2.0], [0.3, 0.2])
    res = check_rorac_compatibility(ev, 0, [0.01, 0.1, 1.0])
    assert res.premise and res.passed and res.epsilon == 1.0
    res = check_rorac_compatibility(ev, 1, [0.01])
    assert not res.premise


def test_grouped_spread():
    s = grouped_spread([1.0, 3.0, 5.0, 7.0], [1, 1, 2, 3])
    assert s[0] == s[1] == pytest.approx(np.std([1, 3], ddof=1))
    assert np.isnan(s[2]) and np.isnan(s[3])


def test_allocate_regimes_consistent():
    b = gaussian_batch(20000, 2)
    var, va = allocate_batch(b, "VaR", 0.99, 20)
    es, ea = allocate_batch(b, "ES", 0.99, 20)
    bv, ba = allocate_batch(b, "VaR-ES", 0.99, 20)
    assert bv == var and np.allclose(ba, ea * var / es)
    assert va.sum() == pytest.approx(var) and ea.sum() == pytest.approx(es)
    with pytest.raises(ValueError):
        allocate_batch(b, "CVaR", 0.99, 20)


def test_stderr_report_fields(tmp_path):
    b = gaussian_batch(20000, 2)
    rep = allocate_with_stderr(b, "VaR", 0.99, 20, [0.1, 0.2])
    assert rep.stderr.shape == (2,) and np.all(rep.stderr > 0)
    assert rep.diagnostics["rorac_stderr"].shape == (2,)
    path = rep.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["asset", "group", "expected_return", "allocation", "stderr", "rorac", "negative"]
    assert float(rows[1][3]) == rep.allocations[0]


def test_report_group_summary():
    rep = AllocationReport(3.0, [1.0, 1.2, 0.8], [0, 0, 0], [0.1, 0.1, 0.1], "exact", groups=np.array([1, 1, 2]))
    g = rep.group_summary()
    assert [x["size"] for x in g] == [2, 1]
    assert g[0]["allocation"] == pytest.approx(1.1)
    assert rep.full_allocation_gap() == pytest.approx(0.0)


def test_example3_es_optimum_is_rorac_compatible():
    # at u = 0.7 both asset RORACs sit within 10% of the portfolio RORAC
    spec = PortfolioSpec(example3_assets(), (0.7, 0.3))
    batch = sample_portfolio(spec, 1_000_000, seed=5)
    rep = allocate_with_stderr(batch, "ES", 0.99, 1000, spec.expected_returns())
    assert np.all(np.abs(rep.roracs / rep.portfolio_rorac - 1) < 0.10)
