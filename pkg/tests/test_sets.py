import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentqa.sets import (
    SetDistribution, SubsetSpace, brute_force_product, enumerate_subsets, log_normalize, log_sum_exp,
    top_k, top_k_product,
)


def test_enumeration_order_and_counts():
    assert enumerate_subsets(SubsetSpace(3, 1, 2)) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)]
    assert len(enumerate_subsets(SubsetSpace(10, 2, 2))) == 45
    assert enumerate_subsets(SubsetSpace(4, 2, 3, contiguous_only=True)) == [(0, 1), (1, 2), (2, 3), (0, 1, 2), (1, 2, 3)]


@given(st.integers(1, 7), st.data())
def test_count_matches_enumeration(n, data):
    lo = data.draw(st.integers(1, n))
    hi = data.draw(st.integers(lo, n))
    for contiguous in (False, True):
        space = SubsetSpace(n, lo, hi, contiguous)
        subs = enumerate_subsets(space)
        assert len(subs) == space.count() == len(set(subs))
        assert all(space.is_valid(s) for s in subs)
        assert () not in subs


def test_invalid_spaces():
    for args in ((0, 1, 1), (3, 0, 1), (3, 2, 1), (3, 1, 4)):
        with pytest.raises(ValueError):
            SubsetSpace(*args)
    assert SubsetSpace.clipped(2, 1, 4).max_size == 2


def test_is_valid_rejects_bad_subsets():
    space = SubsetSpace(4, 1, 2, contiguous_only=True)
    assert not space.is_valid((0, 2))
    assert not space.is_valid((1, 1))
    assert not space.is_valid((2, 1))
    assert not space.is_valid((0, 1, 2))
    assert not space.is_valid((4,))


def test_log_normalize():
    lp = log_normalize([0.0, 0.0])
    np.testing.assert_allclose(np.exp(lp), [0.5, 0.5])
    for bad in ([], [1.0, np.inf], [np.nan]):
        with pytest.raises(ValueError):
            log_normalize(bad)
    assert log_sum_exp([-np.inf, -np.inf]) == -np.inf


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_normalize_sums_to_one_and_shift_invariant(scores):
    lp = log_normalize(scores)
    assert abs(np.exp(lp).sum() - 1) < 1e-12
    np.testing.assert_allclose(log_normalize(np.asarray(scores) + 7.5), lp, atol=1e-9)


def test_top_k_ties_lexicographic():
    space = SubsetSpace(3, 1, 2)
    d = SetDistribution.from_scores(space, np.zeros(6))
    assert [c.structure for c in top_k(d, 3)] == [(0,), (0, 1), (0, 2)]
    assert len(top_k(d, 100)) == 6
    with pytest.raises(ValueError):
        top_k(d, 0)


def _random_dist(rng, n):
    space = SubsetSpace(n, 1, min(n, 3))
    scores = rng.integers(-2, 3, size=space.count()).astype(float)  # ties on purpose
    return SetDistribution.from_scores(space, scores)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 40))
def test_top_k_product_matches_brute_force(seed, n_dists, k):
    rng = np.random.default_rng(seed)
    dists = [_random_dist(rng, int(rng.integers(1, 5))) for _ in range(n_dists)]
    fast = top_k_product(dists, k)
    slow = brute_force_product(dists, k)
    assert [(c.structure, c.index) for c in fast] == [(c.structure, c.index) for c in slow]
    np.testing.assert_allclose([c.log_prob for c in fast], [c.log_prob for c in slow], atol=1e-12)


def test_top_k_product_small_example():
    a = SetDistribution(SubsetSpace(2), ((0,), (1,)), np.log([0.7, 0.3]))
    b = SetDistribution(SubsetSpace(2), ((0,), (1,)), np.log([0.6, 0.4]))
    got = top_k_product([a, b], 4)
    assert [c.structure for c in got] == [((0,), (0,)), ((0,), (1,)), ((1,), (0,)), ((1,), (1,))]
    assert math.isclose(sum(math.exp(c.log_prob) for c in got), 1.0)


def test_product_errors():
    a = SetDistribution(SubsetSpace(2), ((0,), (1,)), np.log([0.5, 0.5]))
    with pytest.raises(ValueError):
        top_k_product([], 1)
    with pytest.raises(ValueError):
        top_k_product([a], 0)
    with pytest.raises(ValueError):
        brute_force_product([a] * 20, 1)
