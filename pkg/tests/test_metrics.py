import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from agrf.metrics import SampleEnsemble, crps, energy_score, max_sliced_wasserstein, random_directions, wasserstein_1d
from agrf.rng import make_rng, normal

finite = st.floats(-100, 100, allow_nan=False)


def naive_crps(s, y):
    s = np.asarray(s, float)
    m = s.size
    return np.mean(np.abs(s - y)) - sum(abs(a - b) for a in s for b in s) / (2 * m * m)


def naive_energy(s, y):
    m = len(s)
    first = np.mean([np.linalg.norm(a - y) for a in s])
    pair = sum(np.linalg.norm(a - b) for a in s for b in s)
    return first - pair / (2 * m * m)


def gaussian_crps(mu, sigma, y):
    z = (y - mu) / sigma
    return sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / np.sqrt(np.pi))


# ---------------------------------------------------------------------------
# Wasserstein


def test_w1_examples():
    assert wasserstein_1d([0.0, 1.0], [1.0, 0.0]) == 0.0
    assert wasserstein_1d([0.0, 1.0], [2.0, 3.0]) == 2.0
    assert wasserstein_1d([0.0, 0.0, 3.0], [1.0, 0.0, 0.0]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        wasserstein_1d([0.0], [1.0, 2.0])


@given(a=arrays(float, 12, elements=finite), b=arrays(float, 12, elements=finite))
def test_w1_matches_scipy(a, b):
    assert wasserstein_1d(a, b) == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


@given(a=arrays(float, 9, elements=finite), b=arrays(float, 9, elements=finite), c=finite, k=st.floats(0.01, 10))
def test_w1_shift_scale_nonnegative(a, b, c, k):
    base = wasserstein_1d(a, b)
    assert base >= 0.0
    assert wasserstein_1d(a + c, b + c) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert wasserstein_1d(k * a, k * b) == pytest.approx(k * base, rel=1e-9, abs=1e-9)


def test_directions_are_unit():
    d = random_directions(make_rng(0), 100, 7)
    assert d.shape == (7, 100)
    np.testing.assert_allclose(np.linalg.norm(d, axis=0), 1.0, rtol=1e-13)


def test_max_sw_identical_is_zero():
    x = normal(make_rng(1), (300, 5))
    assert max_sliced_wasserstein(x, x.copy(), 256) == 0.0


def test_max_sw_two_points():
    a, b = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
    coarse = max_sliced_wasserstein(a, b, 16)
    assert coarse <= 5.0 + 1e-12
    val, direction = max_sliced_wasserstein(a, b, 10_000, return_direction=True)
    assert val == pytest.approx(5.0, abs=1e-3)
    assert abs(direction @ np.array([0.6, 0.8])) == pytest.approx(1.0, abs=1e-3)


def test_max_sw_grows_with_slices():
    x = normal(make_rng(2), (200, 6))
    y = 1.1 * normal(make_rng(3), (200, 6)) + 0.1
    vals = [max_sliced_wasserstein(x, y, n, rng_seed=4) for n in (1, 10, 100, 1000, 4000)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_max_sw_bounded_by_mean_shift_and_detects_it():
    x = normal(make_rng(5), (2000, 3))
    shift = np.array([0.5, 0.0, 0.0])
    val = max_sliced_wasserstein(x, x + shift, 2048)
    assert val <= 0.5 + 1e-12 and val >= 0.49


def test_max_sw_subsamples_larger_ensemble():
    x = normal(make_rng(6), (500, 2))
    assert max_sliced_wasserstein(x, x[:100], 64) >= 0.0
    with pytest.raises(ValueError):
        max_sliced_wasserstein(x, normal(make_rng(7), (10, 3)))


@given(seed=st.integers(0, 1000), c=st.floats(-5, 5), k=st.floats(0.1, 5))
def test_max_sw_shift_and_scale(seed, c, k):
    x = normal(make_rng(seed, "a"), (40, 3))
    y = normal(make_rng(seed, "b"), (40, 3)) + 0.3
    base = max_sliced_wasserstein(x, y, 64, rng_seed=seed)
    assert max_sliced_wasserstein(x + c, y + c, 64, rng_seed=seed) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert max_sliced_wasserstein(k * x, k * y, 64, rng_seed=seed) == pytest.approx(k * base, rel=1e-9)


# ---------------------------------------------------------------------------
# CRPS and energy score


def test_crps_examples():
    assert crps([2.0], 5.0) == 3.0
    assert crps([0.0, 2.0], 1.0) == pytest.approx(1.0 - 2 * 2.0 / 8)
    assert crps(np.full(10, 1.5), 1.5) == 0.0
    with pytest.raises(ValueError):
        crps([], 0.0)


def test_crps_gaussian_closed_form():
    s = normal(make_rng(8), 20_000)
    for y in (-1.5, 0.0, 0.7, 3.0):
        exact = gaussian_crps(0.0, 1.0, y)
        assert crps(s, y) == pytest.approx(exact, rel=0.02)


@given(s=arrays(float, 3, elements=finite), y=finite)
def test_crps_small_ensemble_oracle(s, y):
    assert crps(s, y) == pytest.approx(naive_crps(s, y), rel=1e-10, abs=1e-9)


@given(s=arrays(float, st.integers(1, 30), elements=finite), y=finite)
def test_crps_nonnegative(s, y):
    assert crps(s, y) >= -1e-9


def test_crps_is_proper():
    rng = make_rng(9)
    ys = normal(rng, 1000)
    truth = normal(rng, 200)
    shifted, wide = truth + 0.5, np.sqrt(2.0) * truth  # wide: variance doubled
    mean_true = np.mean([crps(truth, y) for y in ys])
    assert mean_true < np.mean([crps(shifted, y) for y in ys])
    assert mean_true < np.mean([crps(wide, y) for y in ys])


@given(s=arrays(float, st.integers(1, 20), elements=finite), y=finite, c=finite, k=st.floats(-10, 10))
def test_crps_shift_and_scale(s, y, c, k):
    base = crps(s, y)
    assert crps(s + c, y + c) == pytest.approx(base, rel=1e-6, abs=1e-6)
    assert crps(k * s, k * y) == pytest.approx(abs(k) * base, rel=1e-6, abs=1e-6)


@given(s=arrays(float, st.integers(1, 15), elements=finite), y=finite)
def test_energy_score_reduces_to_crps(s, y):
    assert energy_score(s[:, None], [y]) == pytest.approx(crps(s, y), rel=1e-9, abs=1e-9)


def test_energy_score_naive_oracle():
    s = normal(make_rng(10), (7, 4))
    y = normal(make_rng(11), 4)
    assert energy_score(s, y) == pytest.approx(naive_energy(s, y), rel=1e-12)
    assert energy_score(s[:1], y) == pytest.approx(np.linalg.norm(s[0] - y))
    with pytest.raises(ValueError):
        energy_score(s, y[:3])


@given(seed=st.integers(0, 1000), c=st.floats(-5, 5), k=st.floats(0.01, 5))
def test_energy_score_invariances(seed, c, k):
    s = normal(make_rng(seed, "s"), (9, 3))
    y = normal(make_rng(seed, "y"), 3)
    q, _ = np.linalg.qr(normal(make_rng(seed, "q"), (3, 3)))
    base = energy_score(s, y)
    assert base >= -1e-12
    assert energy_score(s + c, y + c) == pytest.approx(base, rel=1e-9)
    assert energy_score(k * s, k * y) == pytest.approx(k * base, rel=1e-9)
    assert energy_score(s @ q.T, q @ y) == pytest.approx(base, rel=1e-9)


def test_ensemble_validation():
    assert SampleEnsemble(np.zeros(5)).dim == 1
    with pytest.raises(ValueError):
        SampleEnsemble(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        SampleEnsemble(np.zeros((0, 3)))
