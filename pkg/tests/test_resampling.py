import numpy as np
import pytest
from hypothesis import given, strategies as st

from rdbn.filters.resampling import DegenerateFilterError, copy_counts, systematic_indices


def test_uniform_weights_copy_each_once():
    counts = copy_counts(np.ones(10), np.random.default_rng(0))
    assert (counts == 1).all()


def test_all_weight_on_one_particle():
    w = np.zeros(7)
    w[3] = 2.5
    assert (systematic_indices(w, np.random.default_rng(1)) == 3).all()


@pytest.mark.parametrize("seed", range(10))
def test_three_to_one(seed):
    counts = copy_counts([0.75, 0.25], np.random.default_rng(seed), n=4)
    assert counts.tolist() == [3, 1]


def test_zero_weight_raises():
    with pytest.raises(DegenerateFilterError):
        systematic_indices(np.zeros(4), np.random.default_rng(0))


@pytest.mark.parametrize("bad", [[], [1.0, -0.5], [np.nan, 1.0], [np.inf]])
def test_invalid_weights(bad):
    with pytest.raises(ValueError):
        systematic_indices(bad, np.random.default_rng(0))


def test_step_in_message():
    e = DegenerateFilterError(17)
    assert e.step == 17 and "step 17" in str(e)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40),
       st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_copy_counts_within_one_of_expectation(weights, n, seed):
    w = np.array(weights)
    if w.sum() <= 0:
        return
    counts = copy_counts(w, np.random.default_rng(seed), n=n)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n * w / w.sum()) < 1 + 1e-9)
    assert np.all(counts[w == 0] == 0)


def copy_count_cases(cases, seed=2024):
    """Random weight vectors, some with zeros; counts sum to ``n`` and stay
    within one of their expectation."""
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        size = int(rng.integers(1, 50))
        w = rng.exponential(size=size) * (rng.random(size) < 0.7)
        if w.sum() == 0:
            w[0] = 1.0
        n = int(rng.integers(1, 300))
        counts = copy_counts(w, rng, n=n)
        assert counts.sum() == n
        assert np.all(np.abs(counts - n * w / w.sum()) < 1 + 1e-9)
        assert np.all(counts[w == 0] == 0)
    return cases


def test_copy_counts_random_cases():
    assert copy_count_cases(10_000) == 10_000
