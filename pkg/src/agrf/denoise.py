"""Exact denoisers for Gaussian-field priors and finite mixtures of them.

A denoiser maps a noisy field ``x = x0 + sigma * w`` to ``E[x0 | x]``.  For a
centered Gaussian prior with core covariance ``C`` this is the linear map
``C (C + sigma^2 I)^{-1}``; for a finite mixture it is the responsibility-weighted
sum of the component maps.  Inputs may be a single vector ``(d,)`` or a batch
``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import logsumexp

from .errors import NumericalError, TooLargeError
from .grf import DENSE_CAP, FemOperators, FieldModel, Mesh, SpectralDensity, chebyshev_apply, dense_covariance

_LOG2PI = np.log(2.0 * np.pi)


def cholesky_with_jitter(mat: np.ndarray):
    """Lower Cholesky factor; retries once with ``1e-12 * tr/d`` added to the diagonal."""
    try:
        return sla.cho_factor(mat, lower=True, check_finite=False)
    except sla.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(mat) / mat.shape[0]
    try:
        return sla.cho_factor(mat + jitter * np.eye(mat.shape[0]), lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        raise NumericalError(
            f"Cholesky failed after jitter {jitter:.3e}: eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]"
        ) from exc


@dataclass(eq=False)
class GaussianFieldPrior:
    """Fixed-parameter field prior restricted to the core grid."""

    ops: FemOperators
    sd: SpectralDensity
    mesh: Mesh
    dense_cap: int = DENSE_CAP
    degree: int = 128
    _cov: np.ndarray | None = field(default=None, repr=False)
    _eig: tuple | None = field(default=None, repr=False)
    _factors: dict = field(default_factory=dict, repr=False)
    _matrices: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_model(cls, model: FieldModel, **kwargs) -> "GaussianFieldPrior":
        return cls(model.ops, model.sd, model.mesh, **kwargs)

    @classmethod
    def from_covariance(cls, cov) -> "GaussianFieldPrior":
        """Prior with an explicit covariance and no mesh (small oracles, scalar checks)."""
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(None, None, None, _cov=0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        if self.mesh is None:
            return self._cov.shape[0]
        return self.mesh.n_core**2

    @property
    def is_dense(self) -> bool:
        return self.ops is None or self.ops.size <= self.dense_cap

    @property
    def covariance(self) -> np.ndarray:
        if self._cov is None:
            if not self.is_dense:
                raise TooLargeError(f"{self.ops.size} unknowns exceed the dense cap of {self.dense_cap}")
            self._cov = dense_covariance(self.ops, self.sd, self.mesh, cap=self.dense_cap)
        return self._cov

    def covariance_eigvals(self) -> np.ndarray:
        if self._eig is None:
            self._eig = np.clip(np.linalg.eigvalsh(self.covariance), 0.0, None)
        return self._eig

    def cov_apply(self, x: np.ndarray) -> np.ndarray:
        """``C x`` for rows of ``x``; Chebyshev-based when above the dense cap."""
        if self.is_dense:
            return x @ self.covariance
        x2 = np.atleast_2d(x)
        ext = np.zeros((self.ops.size, x2.shape[0]))
        ext[self.mesh.core_index_map] = x2.T
        ext *= self.ops.inv_sqrt_mass[:, None]
        y = chebyshev_apply(self.ops, self.sd.squared(), ext, 2 * self.degree)
        y = (self.ops.inv_sqrt_mass[:, None] * y)[self.mesh.core_index_map].T
        return y.reshape(np.shape(x))

    def noisy_factor(self, sigma: float):
        """Cached Cholesky factor of ``C + sigma^2 I``."""
        key = float(sigma)
        fac = self._factors.get(key)
        if fac is None:
            if len(self._factors) > 4096:
                self._factors.clear()
            fac = cholesky_with_jitter(self.covariance + key**2 * np.eye(self.dim))
            self._factors[key] = fac
        return fac

    def denoising_matrix(self, sigma: float) -> np.ndarray:
        """``(C + sigma^2 I)^{-1} C``, the symmetric denoising map; cached per sigma."""
        key = float(sigma)
        mat = self._matrices.get(key)
        if mat is None:
            if len(self._matrices) > 4096:
                self._matrices.clear()
            mat = sla.cho_solve(self.noisy_factor(sigma), self.covariance, check_finite=False)
            mat = 0.5 * (mat + mat.T)
            self._matrices[key] = mat
        return mat

    def marginal_logpdf(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """``log N(x; 0, C + sigma^2 I)`` per row."""
        fac = self.noisy_factor(sigma)
        z = sla.cho_solve(fac, np.atleast_2d(x).T, check_finite=False).T
        logdet = 2.0 * np.sum(np.log(np.diag(fac[0])))
        quad = np.sum(np.atleast_2d(x) * z, axis=1)
        out = -0.5 * (quad + logdet + self.dim * _LOG2PI)
        return out if np.ndim(x) > 1 else out[0]


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def exact_denoise(prior: GaussianFieldPrior, x_sigma: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior mean ``C (C + sigma^2 I)^{-1} x`` under the Gaussian prior."""
    _check_sigma(sigma)
    x = np.asarray(x_sigma, dtype=float)
    if x.shape[-1] != prior.dim:
        raise ValueError(f"expected last dimension {prior.dim}, got {x.shape[-1]}")
    if prior.is_dense:
        if x.ndim > 1 and x.shape[0] > prior.dim:
            out = x @ prior.denoising_matrix(sigma)
        else:
            z = sla.cho_solve(prior.noisy_factor(sigma), np.atleast_2d(x).T, check_finite=False)
            out = (prior.covariance @ z).T
            out = out if x.ndim > 1 else out[0]
    else:
        out = _iterative_denoise(prior, x, sigma)
    if not np.all(np.isfinite(out)):
        raise NumericalError("denoiser produced non-finite values")
    return out


def _iterative_denoise(prior, x, sigma, rtol=1e-10):
    d = prior.dim
    op = LinearOperator((d, d), matvec=lambda v: prior.cov_apply(v) + sigma**2 * v, dtype=float)
    rows = np.atleast_2d(x)
    out = np.empty_like(rows)
    for i, row in enumerate(rows):
        z, info = cg(op, row, rtol=rtol, atol=0.0, maxiter=20 * d)
        if info != 0:
            raise NumericalError(f"CG did not converge (info={info}) at sigma={sigma}")
        out[i] = row - sigma**2 * z
    return out if x.ndim > 1 else out[0]


def optimal_mse(prior: GaussianFieldPrior, sigma: float) -> float:
    """Expected squared error of the exact denoiser, ``sum_k s_k sigma^2 / (s_k + sigma^2)``
    over the eigenvalues ``s_k`` of the core covariance."""
    _check_sigma(sigma)
    s = prior.covariance_eigvals()
    v = float(sigma) ** 2
    return float(np.sum(s * v / (s + v)))


def mse_slope(prior: GaussianFieldPrior, sigmas: Sequence[float]) -> float:
    """Least-squares slope of ``log optimal_mse`` against ``log sigma^2``."""
    sig = np.asarray(sigmas, dtype=float)
    if sig.ndim != 1 or sig.size < 4:
        raise ValueError("need at least 4 sigma values")
    if np.any(sig <= 0):
        raise ValueError("sigmas must be positive")
    if np.unique(sig).size != sig.size:
        raise ValueError("sigma values must be distinct")
    if sig.max() / sig.min() < 10.0:
        raise ValueError("sigma values must span at least one decade")
    mse = np.array([optimal_mse(prior, s) for s in sig])
    return float(np.polyfit(np.log(sig**2), np.log(mse), 1)[0])


def power_law_sigmas(prior: GaussianFieldPrior, lo: float = 0.01, hi: float = 0.5, num: int = 24) -> np.ndarray:
    """Log-spaced sigmas whose optimal MSE runs from ``lo`` to ``hi`` times ``tr C``."""
    tr = float(np.sum(prior.covariance_eigvals()))

    def solve(frac):
        a, b = -40.0, 40.0  # bracket in log sigma^2
        for _ in range(200):
            m = 0.5 * (a + b)
            if optimal_mse(prior, np.exp(0.5 * m)) < frac * tr:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    return np.exp(0.5 * np.linspace(solve(lo), solve(hi), num))


# ---------------------------------------------------------------------------
# Mixtures
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class MixturePrior:
    components: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.components) == 0 or len(self.components) != self.weights.size:
            raise ValueError("need one weight per component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("mixture components must share the core grid")

    @property
    def dim(self) -> int:
        return self.components[0].dim


def mixture_denoise(prior: MixturePrior, x_sigma: np.ndarray, sigma: float, return_responsibilities: bool = False):
    """Posterior mean under the mixture:
    ``sum_i r_i(x) C_i (C_i + sigma^2 I)^{-1} x``, ``r_i`` proportional to ``w_i N(x; 0, C_i + sigma^2 I)``."""
    _check_sigma(sigma)
    x = np.asarray(x_sigma, dtype=float)
    x2 = np.atleast_2d(x)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.weights)
    logp = np.stack([lw + c.marginal_logpdf(x2, sigma) for lw, c in zip(logw, prior.components)])
    norm = logsumexp(logp, axis=0)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("all mixture responsibilities underflowed")
    resp = np.exp(logp - norm)
    out = np.zeros_like(x2)
    for r, c in zip(resp, prior.components):
        out += r[:, None] * exact_denoise(c, x2, sigma)
    if x.ndim == 1:
        out, resp = out[0], resp[:, 0]
    return (out, resp) if return_responsibilities else out


def mixture_denoise_vjp(prior: MixturePrior, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray:
    """``J(x)^T v`` for the mixture denoiser ``D``.

    ``J = sum_i r_i B_i + sum_i (B_i x) grad(r_i)^T`` with ``B_i`` the (symmetric)
    component maps and ``grad(r_i) = r_i (g_i - sum_j r_j g_j)``, ``g_i = -(C_i + sigma^2 I)^{-1} x``.
    """
    x2, v2 = np.atleast_2d(x), np.atleast_2d(v)
    _, resp = mixture_denoise(prior, x2, sigma, return_responsibilities=True)
    g = np.stack([-sla.cho_solve(c.noisy_factor(sigma), x2.T, check_finite=False).T for c in prior.components])
    bx = np.stack([exact_denoise(c, x2, sigma) for c in prior.components])
    bv = np.stack([exact_denoise(c, v2, sigma) for c in prior.components])
    gbar = np.einsum("in,ind->nd", resp, g)
    proj = np.einsum("ind,nd->in", bx, v2)
    out = np.einsum("in,ind->nd", resp, bv) + np.einsum("in,ind->nd", resp * proj, g - gbar[None])
    return out if np.ndim(x) > 1 else out[0]


# ---------------------------------------------------------------------------
# Denoiser objects
# ---------------------------------------------------------------------------


class ExactGaussianDenoiser:
    exact = True

    def __init__(self, prior: GaussianFieldPrior):
        self.prior = prior

    def __call__(self, x, sigma):
        return exact_denoise(self.prior, x, sigma)

    def vjp(self, x, sigma, v):
        # the denoising matrix is symmetric
        return exact_denoise(self.prior, v, sigma)


class MixtureDenoiser:
    exact = True

    def __init__(self, prior: MixturePrior):
        self.prior = prior

    def __call__(self, x, sigma):
        return mixture_denoise(self.prior, x, sigma)

    def vjp(self, x, sigma, v):
        return mixture_denoise_vjp(self.prior, x, sigma, v)


class FunctionDenoiser:
    """Wraps a caller-supplied ``f(x, sigma)``; ``vjp`` optional."""

    def __init__(self, fn: Callable, vjp: Callable | None = None, exact: bool = False):
        self.fn = fn
        self._vjp = vjp
        self.exact = exact

    def __call__(self, x, sigma):
        return self.fn(x, sigma)

    def vjp(self, x, sigma, v):
        if self._vjp is None:
            raise TypeError("this denoiser does not provide a vector-Jacobian product")
        return self._vjp(x, sigma, v)


def score_from_denoiser(d: Callable, x: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the noisy marginal: ``(D(x, sigma) - x) / sigma^2``."""
    _check_sigma(sigma)
    x = np.asarray(x, dtype=float)
    return (d(x, sigma) - x) / sigma**2
