import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st

from besteffort.stats import bootstrap_ci


def test_constant_samples():
    ci = bootstrap_ci([5, 5, 5, 5])
    assert (ci.mean, ci.lower, ci.upper) == (5, 5, 5)


def test_single_sample():
    ci = bootstrap_ci([7])
    assert (ci.lower, ci.upper) == (7, 7) and ci.n == 1


def test_against_normal_approximation():
    samples = list(range(1, 101))
    ci = bootstrap_ci(samples, seed=123)
    assert ci.lower < 50.5 < ci.upper
    # independent check: mean +/- 1.96 * s / sqrt(n)
    half = 1.96 * statistics.stdev(samples) / len(samples) ** 0.5
    normal_width = 2 * half
    assert abs((ci.upper - ci.lower) - normal_width) / normal_width < 0.15
    assert abs(ci.lower - (50.5 - half)) < 0.15 * normal_width
    assert abs(ci.upper - (50.5 + half)) < 0.15 * normal_width


def test_empty_rejected():
    with pytest.raises(ValueError):
        bootstrap_ci([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.randoms(), st.integers(0, 100))
def test_permutation_invariant_and_ordered(samples, rnd, seed):
    a = bootstrap_ci(samples, resamples=200, seed=seed)
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    b = bootstrap_ci(shuffled, resamples=200, seed=seed)
    assert (a.lower, a.upper) == (b.lower, b.upper)
    assert a.lower <= a.mean <= a.upper


def test_deterministic_and_overlap():
    a = bootstrap_ci([1, 2, 3, 4], seed=1, metric="x")
    assert a == bootstrap_ci([1, 2, 3, 4], seed=1, metric="x")
    far = bootstrap_ci([100, 101, 102])
    assert not a.overlaps(far) and a.overlaps(a)
    assert a.resamples == 1000
