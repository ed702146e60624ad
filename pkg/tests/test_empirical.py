import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capalloc.empirical import (RealizationBatch, band_filter, effective_sample_size, empirical_quantile, level_index,
                                read_batch_csv, sort_batch, weighted_quantile, write_batch_csv)
from capalloc.discrete import example1_distribution, var_exact
from capalloc.models import DiscreteAsset, PortfolioSpec, sample_portfolio


def batch(totals, weights=None):
    return RealizationBatch.from_totals(totals, weights)


def test_sort_batch_small_example():
    sb = sort_batch(batch([-3, 5, -1, 2]), 0.5)
    assert sb.order.tolist() == [0, 2, 3, 1]
    assert sb.level_index == 2


def test_level_index_at_one_million():
    assert level_index(0.99, 1_000_000) == 10_000


def test_sort_batch_ties_are_stable():
    sb = sort_batch(batch([1, 1, 1]), 0.9)
    assert sb.order.tolist() == [0, 1, 2]
    assert sb.level_index == 0


def test_quantile_two_atom_sample():
    assert empirical_quantile(batch([0.0] * 99 + [-100.0]), 0.99) == 0.0


def test_quantile_median_is_lower_point():
    assert empirical_quantile(batch([1, 2, 3, 4]), 0.5) == 2


def test_quantile_of_example1_samples_matches_oracle():
    d = example1_distribution()
    spec = PortfolioSpec((DiscreteAsset((0.0, -200.0), (0.9925, 0.0075)), DiscreteAsset((0.0, -100.0), (0.9925, 0.0075))))
    b = sample_portfolio(spec, 400_000, seed=3)
    assert empirical_quantile(b, 0.01) == -var_exact(d, None, 0.99) == -100.0


def test_weighted_quantile_uniform_weights():
    v, _ = weighted_quantile(batch([-2, -1, 0], [1, 1, 1]), 2 / 3)
    assert v == -1


def test_weighted_quantile_hand_example():
    v, k = weighted_quantile(batch([-2, -1, 0], [3, 1, 1]), 0.5)
    assert (v, k) == (-2, 0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_unit_weights_reduce_to_unweighted_rule(vals, alpha):
    sb = sort_batch(batch(vals), alpha)
    v, k = weighted_quantile(batch(vals, np.ones(len(vals))), alpha)
    assert k == sb.level_index
    assert v == sb.level_value


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_quantile_definition(vals, alpha):
    # smallest sample value x with P(X <= x) >= alpha
    q = empirical_quantile(batch(vals), alpha)
    arr = np.array(vals)
    assert np.mean(arr <= q) >= alpha - 1e-12
    below = arr[arr < q]
    if below.size:
        assert np.mean(arr <= below.max()) < alpha


def test_totals_must_match_components():
    with pytest.raises(ValueError):
        RealizationBatch(np.ones((3, 2)), np.ones(3))


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        batch([1, 2], [1, -1])


def test_effective_sample_size():
    assert effective_sample_size(np.ones(10)) == pytest.approx(10)
    assert effective_sample_size([1, 0, 0]) == pytest.approx(1)


def test_band_filter_keeps_interval():
    b = band_filter(batch([-3, -2, -1, 0, 1]), -2, 0)
    assert sorted(b.totals.tolist()) == [-2, -1, 0]


def test_csv_round_trip(tmp_path):
    b = RealizationBatch.from_components(np.random.default_rng(0).normal(size=(20, 3)), np.arange(1, 21.0), seed=9)
    p = write_batch_csv(b, tmp_path / "b.csv")
    back = read_batch_csv(p)
    assert np.array_equal(back.components, b.components)
    assert np.array_equal(back.weights, b.weights)
