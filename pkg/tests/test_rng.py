import numpy as np
from scipy import stats

from agrf.rng import make_rng, normal, uniform_open


def test_same_keys_same_stream():
    a = normal(make_rng(3, "ddpm", 2), 50)
    b = normal(make_rng(3, "ddpm", 2), 50)
    assert np.array_equal(a, b)


def test_different_keys_differ():
    a = normal(make_rng(3, "ddpm"), 50)
    b = normal(make_rng(3, "ddim"), 50)
    c = normal(make_rng(4, "ddpm"), 50)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniforms_strictly_inside_unit_interval():
    u = uniform_open(make_rng(0), 100_000)
    assert u.min() > 0.0 and u.max() < 1.0


def test_normals_are_standard():
    z = normal(make_rng(1, "check"), 200_000)
    assert np.all(np.isfinite(z))
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_negative_keys_rejected():
    import pytest

    with pytest.raises(ValueError):
        make_rng(1, -3)
