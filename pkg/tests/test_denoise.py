import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from agrf.denoise import (
    ExactGaussianDenoiser,
    FunctionDenoiser,
    GaussianFieldPrior,
    MixtureDenoiser,
    MixturePrior,
    cholesky_with_jitter,
    exact_denoise,
    mixture_denoise,
    mixture_denoise_vjp,
    mse_slope,
    optimal_mse,
    power_law_sigmas,
    score_from_denoiser,
)
from agrf.errors import NumericalError
from agrf.grf import FieldModel, build_mesh, isotropic_field, scaled_stiffness_eigh
from agrf.rng import make_rng, normal

from conftest import gaussian_prior


def scalar_prior(var):
    return GaussianFieldPrior.from_covariance([[var]])


# ---------------------------------------------------------------------------
# exact Gaussian denoiser


@given(x=st.floats(-50, 50), sigma=st.floats(1e-3, 1e3))
def test_scalar_conjugation(x, sigma):
    out = exact_denoise(scalar_prior(1.0), np.array([x]), sigma)
    assert out[0] == pytest.approx(x / (1 + sigma**2), rel=1e-12, abs=1e-300)


def test_vanishing_noise_returns_input(prior8):
    x = normal(make_rng(1), prior8.dim)
    out = exact_denoise(prior8, x, 1e-8)
    assert np.linalg.norm(out - x) <= 1e-6 * np.linalg.norm(x)


def test_matches_precision_form():
    # without padding the core covariance is the full one, so the precision form applies
    mesh = build_mesh(8, 0.0)
    model = FieldModel.build(mesh, isotropic_field(mesh), 0.2)
    prior = GaussianFieldPrior.from_model(model)
    sigma = 0.5
    x = normal(make_rng(5), prior.dim)
    lam, vec = scaled_stiffness_eigh(model.ops)
    sqrt_m = np.sqrt(model.ops.mass_diag)
    precision = (sqrt_m[:, None] * vec * model.sd(lam) ** -2.0) @ (vec.T * sqrt_m[None, :])
    q = np.linalg.inv(precision + np.eye(prior.dim) / sigma**2)
    ref = q @ x / sigma**2
    out = exact_denoise(prior, x, sigma)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) <= 1e-8


def test_batch_paths_agree(prior8):
    x = normal(make_rng(2), (prior8.dim + 5, prior8.dim))
    batch = exact_denoise(prior8, x, 0.3)  # uses the cached denoising matrix
    rows = np.stack([exact_denoise(prior8, r, 0.3) for r in x[:4]])
    np.testing.assert_allclose(batch[:4], rows, rtol=1e-10, atol=1e-12)
    small = exact_denoise(prior8, x[:3], 0.3)
    np.testing.assert_allclose(small, rows[:3], rtol=1e-10, atol=1e-12)


def test_iterative_path_matches_dense():
    dense = gaussian_prior(8, 0.2)
    sparse = GaussianFieldPrior(dense.ops, dense.sd, dense.mesh, dense_cap=10)
    assert not sparse.is_dense
    x = normal(make_rng(4), (2, dense.dim))
    ref = exact_denoise(dense, x, 0.4)
    out = exact_denoise(sparse, x, 0.4)
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) <= 1e-8


def test_rejects_bad_sigma_and_shape(prior8):
    with pytest.raises(ValueError):
        exact_denoise(prior8, np.zeros(prior8.dim), 0.0)
    with pytest.raises(ValueError):
        exact_denoise(prior8, np.zeros(prior8.dim + 1), 0.1)


def test_cholesky_jitter_and_failure():
    singular = np.ones((3, 3))
    fac = cholesky_with_jitter(singular)
    assert np.all(np.isfinite(fac[0]))
    with pytest.raises(NumericalError):
        cholesky_with_jitter(-np.eye(3))


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000), sigma=st.floats(0.01, 10))
def test_linearity(prior8, a, b, seed, sigma):
    x = normal(make_rng(seed, "x"), prior8.dim)
    y = normal(make_rng(seed, "y"), prior8.dim)
    lhs = exact_denoise(prior8, a * x + b * y, sigma)
    rhs = a * exact_denoise(prior8, x, sigma) + b * exact_denoise(prior8, y, sigma)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))


@pytest.mark.parametrize("sigma", [1e-3, 0.1, 1.0, 30.0])
def test_denoising_matrix_spectrum(aniso_prior8, sigma):
    ev = np.linalg.eigvalsh(aniso_prior8.denoising_matrix(sigma))
    assert ev.min() >= -1e-12 and ev.max() < 1.0


@given(seed=st.integers(0, 10_000), sigma=st.floats(0.01, 20))
def test_tweedie_identity(prior8, seed, sigma):
    d = ExactGaussianDenoiser(prior8)
    x = 3 * normal(make_rng(seed), prior8.dim)
    recon = x + sigma**2 * score_from_denoiser(d, x, sigma)
    np.testing.assert_allclose(recon, d(x, sigma), rtol=0, atol=1e-12 * (1 + np.abs(x).max()))


def test_exact_vjp_is_transpose_product(aniso_prior8):
    d = ExactGaussianDenoiser(aniso_prior8)
    v = normal(make_rng(8), aniso_prior8.dim)
    jac = aniso_prior8.covariance @ np.linalg.inv(aniso_prior8.covariance + 0.25 * np.eye(aniso_prior8.dim))
    np.testing.assert_allclose(d.vjp(None, 0.5, v), jac.T @ v, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# MSE diagnostics


def test_mse_limits(prior8):
    tr = np.trace(prior8.covariance)
    assert optimal_mse(prior8, 1e6) == pytest.approx(tr, rel=1e-3)
    assert optimal_mse(prior8, 1e-9) <= 1e-12 * prior8.dim


def test_mse_matches_monte_carlo(prior8):
    sigma, n = 0.3, 100_000
    chol = np.linalg.cholesky(prior8.covariance + 1e-14 * np.eye(prior8.dim))
    x0 = normal(make_rng(0, "x0"), (n, prior8.dim)) @ chol.T
    xs = x0 + sigma * normal(make_rng(0, "noise"), (n, prior8.dim))
    err = np.sum((exact_denoise(prior8, xs, sigma) - x0) ** 2, axis=1)
    se = err.std(ddof=1) / np.sqrt(n)
    assert abs(err.mean() - optimal_mse(prior8, sigma)) <= 3 * se


@given(s1=st.floats(1e-4, 1e3), ratio=st.floats(1.001, 100))
def test_mse_increasing(prior8, s1, ratio):
    assert optimal_mse(prior8, s1 * ratio) > optimal_mse(prior8, s1)


def test_slope_rejects_degenerate_grids(prior8):
    with pytest.raises(ValueError):
        mse_slope(prior8, [0.1, 0.1, 0.5, 1.0, 2.0])
    with pytest.raises(ValueError):
        mse_slope(prior8, [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        mse_slope(prior8, [0.1, 0.2, 0.3, 0.5])


def test_white_noise_closed_form_and_unit_slope():
    c, d = 2.0, 5
    prior = GaussianFieldPrior.from_covariance(c * np.eye(d))
    for s in (0.1, 1.0, 3.0):
        assert optimal_mse(prior, s) == pytest.approx(d / (1 / c + 1 / s**2), rel=1e-12)
    assert mse_slope(prior, np.geomspace(1e-4, 1e-3, 8)) == pytest.approx(1.0, abs=1e-3)


def test_power_law_window_bounds(prior8):
    sig = power_law_sigmas(prior8, 0.01, 0.5, 10)
    tr = np.trace(prior8.covariance)
    assert optimal_mse(prior8, sig[0]) == pytest.approx(0.01 * tr, rel=1e-6)
    assert optimal_mse(prior8, sig[-1]) == pytest.approx(0.5 * tr, rel=1e-6)


def test_slope_near_two_thirds_on_fine_grid():
    prior = gaussian_prior(32, 0.1)
    slope = mse_slope(prior, power_law_sigmas(prior))
    assert 2 / 3 - 0.1 <= slope <= 2 / 3 + 0.1


# ---------------------------------------------------------------------------
# mixtures


def test_single_component_mixture(prior8):
    mix = MixturePrior([prior8], [1.0])
    x = normal(make_rng(3), (4, prior8.dim))
    np.testing.assert_allclose(mixture_denoise(mix, x, 0.4), exact_denoise(prior8, x, 0.4), rtol=0, atol=1e-12)


def test_identical_components(prior8):
    mix = MixturePrior([prior8, prior8], [0.3, 0.7])
    x = normal(make_rng(3), prior8.dim)
    np.testing.assert_allclose(mixture_denoise(mix, x, 0.4), exact_denoise(prior8, x, 0.4), rtol=0, atol=1e-12)


def test_scalar_mixture_quadrature():
    mix = MixturePrior([scalar_prior(1.0), scalar_prior(9.0)], [0.5, 0.5])
    grid = np.linspace(-40, 40, 100_000)
    prior_pdf = 0.5 * np.exp(-grid**2 / 2) / np.sqrt(2 * np.pi) + 0.5 * np.exp(-grid**2 / 18) / np.sqrt(18 * np.pi)
    lik = np.exp(-((2.0 - grid) ** 2) / 2)
    ref = np.sum(grid * prior_pdf * lik) / np.sum(prior_pdf * lik)
    assert mixture_denoise(mix, np.array([2.0]), 1.0)[0] == pytest.approx(ref, abs=1e-6)


def test_responsibilities_sum_to_one_and_permute(prior8, aniso_prior8):
    x = normal(make_rng(6), (5, prior8.dim))
    mix = MixturePrior([prior8, aniso_prior8], [0.2, 0.8])
    flipped = MixturePrior([aniso_prior8, prior8], [0.8, 0.2])
    out, r = mixture_denoise(mix, x, 0.7, return_responsibilities=True)
    out2, r2 = mixture_denoise(flipped, x, 0.7, return_responsibilities=True)
    np.testing.assert_allclose(r.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(r, r2[::-1], atol=1e-12)
    np.testing.assert_allclose(out, out2, atol=1e-12)


def test_mixture_vjp_against_finite_differences(prior8, aniso_prior8):
    mix = MixturePrior([prior8, aniso_prior8], [0.4, 0.6])
    sigma = 0.6
    x = normal(make_rng(9), prior8.dim)
    v = normal(make_rng(10), prior8.dim)
    h = 1e-6
    jac = np.empty((prior8.dim, prior8.dim))
    for j in range(prior8.dim):
        e = np.zeros(prior8.dim)
        e[j] = h
        jac[:, j] = (mixture_denoise(mix, x + e, sigma) - mixture_denoise(mix, x - e, sigma)) / (2 * h)
    np.testing.assert_allclose(mixture_denoise_vjp(mix, x, sigma, v), jac.T @ v, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(MixtureDenoiser(mix).vjp(x, sigma, v), jac.T @ v, rtol=1e-5, atol=1e-6)


def test_mixture_validation(prior8):
    with pytest.raises(ValueError):
        MixturePrior([prior8], [0.5])
    with pytest.raises(ValueError):
        MixturePrior([prior8, scalar_prior(1.0)], [0.5, 0.5])
    with pytest.raises(ValueError):
        MixturePrior([prior8, prior8], [1.5, -0.5])


# ---------------------------------------------------------------------------
# scores


@given(x=st.floats(-20, 20), sigma=st.floats(0.01, 50))
def test_scalar_gaussian_score(x, sigma):
    d = ExactGaussianDenoiser(scalar_prior(1.0))
    assert score_from_denoiser(d, np.array([x]), sigma)[0] == pytest.approx(-x / (1 + sigma**2), rel=1e-9, abs=1e-12)


def test_identity_denoiser_has_zero_score():
    d = FunctionDenoiser(lambda x, s: x)
    assert np.all(score_from_denoiser(d, np.arange(5.0), 0.3) == 0)
    with pytest.raises(TypeError):
        d.vjp(np.zeros(2), 1.0, np.zeros(2))


def test_mixture_score_matches_log_density_derivative():
    var, w, sigma = np.array([1.0, 9.0]), np.array([0.3, 0.7]), 0.8
    mix = MixturePrior([scalar_prior(v) for v in var], w)

    def logp(x):
        s = var + sigma**2
        return logsumexp(np.log(w) - 0.5 * x**2 / s - 0.5 * np.log(2 * np.pi * s))

    for x in (-3.0, 0.4, 2.5):
        fd = (logp(x + 1e-5) - logp(x - 1e-5)) / 2e-5
        assert score_from_denoiser(MixtureDenoiser(mix), np.array([x]), sigma)[0] == pytest.approx(fd, abs=1e-4)
