"""Locally anisotropic Gaussian random fields on the unit square.

The field is the finite-element solution of a Whittle-Matern SPDE on the square
equipped with a Riemannian metric ``G_s``.  Linear elements on a regular
triangulation give a lumped (diagonal) mass matrix ``M``, a stiffness matrix
``R`` and the scaled stiffness ``S = M^{-1/2} R M^{-1/2}``.  Node values are
the centered Gaussian vector

    Z = M^{-1/2} gamma(S) W,    W ~ N(0, I),

with covariance ``M^{-1/2} gamma(S)^2 M^{-1/2}``, and ``gamma(S) W`` is applied
with a Chebyshev polynomial so that no eigendecomposition is needed.

The simulation runs on a grid padded around [0, 1]^2 to push the natural
(Neumann) boundary away from the core; fields are returned on the core block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as npcheb

from .errors import AssemblyError, DegenerateNodesError, TooLargeError
from .rng import make_rng, normal

DENSE_CAP = 4096


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mesh:
    """Regular triangulated grid over the padded square.

    Nodes are numbered row-major: node ``r * n_ext + c`` sits at
    ``(origin + c * spacing, origin + r * spacing)``.
    """

    n_ext: int
    n_core: int
    spacing: float
    pad: int
    core_index_map: np.ndarray
    triangles: np.ndarray

    @property
    def origin(self) -> float:
        return -self.pad * self.spacing

    @property
    def n_nodes(self) -> int:
        return self.n_ext * self.n_ext

    @property
    def nodes(self) -> np.ndarray:
        coords = self.origin + self.spacing * np.arange(self.n_ext)
        xx, yy = np.meshgrid(coords, coords)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def core_nodes(self) -> np.ndarray:
        return self.nodes[self.core_index_map]

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Core-grid entries of an extended-grid vector (last axis)."""
        return values[..., self.core_index_map]


def build_mesh(n_core: int, margin_fraction: float = 0.1) -> Mesh:
    """Grid with ``n_core`` nodes per side on [0, 1] plus
    ``round(margin_fraction * n_core)`` extra nodes on each side."""
    n_core = int(n_core)
    if n_core < 2:
        raise ValueError(f"n_core must be >= 2, got {n_core}")
    if margin_fraction < 0:
        raise ValueError(f"margin_fraction must be >= 0, got {margin_fraction}")
    pad = int(np.floor(margin_fraction * n_core + 0.5))
    n_ext = n_core + 2 * pad
    h = 1.0 / (n_core - 1)

    rows, cols = np.meshgrid(np.arange(pad, pad + n_core), np.arange(pad, pad + n_core), indexing="ij")
    core = (rows * n_ext + cols).ravel()

    r, c = np.meshgrid(np.arange(n_ext - 1), np.arange(n_ext - 1), indexing="ij")
    ll = (r * n_ext + c).ravel()
    lr, ul = ll + 1, ll + n_ext
    ur = ul + 1
    tri = np.concatenate([np.column_stack([ll, lr, ur]), np.column_stack([ll, ur, ul])])
    return Mesh(n_ext=n_ext, n_core=n_core, spacing=h, pad=pad, core_index_map=core, triangles=tri)


# ---------------------------------------------------------------------------
# Thin-plate splines and anisotropy
# ---------------------------------------------------------------------------


def _tps_kernel(r: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r * r * np.log(r)
    return np.where(r > 0, out, 0.0)


class ThinPlateSpline:
    """Interpolant ``f(x) = sum_j w_j phi(|x - x_j|) + c0 + c1 x + c2 y``
    with ``phi(r) = r^2 log r`` and the usual side conditions ``P^T w = 0``."""

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (n, 2)")
        if values.shape != (nodes.shape[0],):
            raise ValueError("one value per node required")
        n = nodes.shape[0]
        poly = np.column_stack([np.ones(n), nodes])
        if n < 3 or np.linalg.matrix_rank(poly) < 3:
            raise DegenerateNodesError("need at least 3 non-collinear nodes")
        dist = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=-1)
        system = np.zeros((n + 3, n + 3))
        system[:n, :n] = _tps_kernel(dist)
        system[:n, n:] = poly
        system[n:, :n] = poly.T
        rhs = np.concatenate([values, np.zeros(3)])
        try:
            sol = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateNodesError(f"singular thin-plate system: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise DegenerateNodesError("thin-plate system produced non-finite weights")
        self.nodes = nodes
        self.weights = sol[:n]
        self.affine = sol[n:]

    def __call__(self, query) -> np.ndarray:
        q = np.atleast_2d(np.asarray(query, dtype=float))
        r = np.linalg.norm(q[:, None, :] - self.nodes[None, :, :], axis=-1)
        out = _tps_kernel(r) @ self.weights + self.affine[0] + q @ self.affine[1:]
        return out if np.ndim(query) > 1 else out[0]

    def gradient(self, query) -> np.ndarray:
        """Analytic gradient; ``d/dx r^2 log r = (x - x_j)(2 log r + 1)``."""
        q = np.atleast_2d(np.asarray(query, dtype=float))
        diff = q[:, None, :] - self.nodes[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        with np.errstate(divide="ignore"):
            radial = np.where(r > 0, 2.0 * np.log(np.where(r > 0, r, 1.0)) + 1.0, 0.0)
        grad = np.einsum("qn,qnk->qk", radial * self.weights[None, :], diff) + self.affine[1:]
        return grad if np.ndim(query) > 1 else grad[0]


def thin_plate_spline(nodes, values, query):
    """Evaluate the thin-plate interpolant of ``(nodes, values)`` at ``query``."""
    return ThinPlateSpline(nodes, values)(query)


def equidistant_nodes(per_side: int = 6) -> np.ndarray:
    """``per_side**2`` spline nodes evenly spread over [0, 1]^2."""
    t = np.linspace(0.0, 1.0, per_side)
    xx, yy = np.meshgrid(t, t)
    return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True, eq=False)
class AnisotropyField:
    """Per-node principal direction plus constant length scales.

    The metric is ``G = Q^T Q`` where ``Q`` has eigenvalue ``1/rho1`` along the
    direction and ``1/rho2`` across it, so correlation lengths are ``a*rho1``
    and ``a*rho2`` respectively.
    """

    direction: np.ndarray
    rho1: float
    rho2: float

    def __post_init__(self):
        for name in ("rho1", "rho2"):
            val = getattr(self, name)
            if not (0.0 < val <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if not np.isclose(max(self.rho1, self.rho2), 1.0, rtol=0, atol=1e-12):
            raise ValueError("max(rho1, rho2) must equal 1")
        norms = np.linalg.norm(self.direction, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-12):
            raise ValueError("directions must be unit vectors")

    def metric(self) -> np.ndarray:
        v = self.direction
        w = np.column_stack([-v[:, 1], v[:, 0]])
        return (np.einsum("ni,nj->nij", v, v) / self.rho1**2
                + np.einsum("ni,nj->nij", w, w) / self.rho2**2)


def isotropic_field(mesh: Mesh) -> AnisotropyField:
    return constant_anisotropy(mesh, 1.0, 1.0, 0.0)


def constant_anisotropy(mesh: Mesh, rho1: float, rho2: float, angle: float) -> AnisotropyField:
    """Same direction ``(cos angle, sin angle)`` at every node."""
    v = np.tile([np.cos(angle), np.sin(angle)], (mesh.n_nodes, 1))
    return AnisotropyField(direction=v, rho1=float(rho1), rho2=float(rho2))


def anisotropy_from_potential(nodes, node_values, rho1: float, rho2: float, mesh: Mesh) -> AnisotropyField:
    """Directions from the normalized gradient of a thin-plate potential.

    Where the gradient vanishes (norm below 1e-10) the direction falls back to (1, 0).
    """
    for val in (rho1, rho2):
        if not (0.0 < val <= 1.0):
            raise ValueError(f"rho values must lie in (0, 1], got {val}")
    grad = ThinPlateSpline(nodes, node_values).gradient(mesh.nodes)
    norm = np.linalg.norm(grad, axis=1)
    flat = norm < 1e-10
    direction = np.where(flat[:, None], np.array([1.0, 0.0]), grad / np.where(flat, 1.0, norm)[:, None])
    return AnisotropyField(direction=direction, rho1=float(rho1), rho2=float(rho2))


# ---------------------------------------------------------------------------
# Finite-element operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FemOperators:
    mass_diag: np.ndarray
    stiffness: sp.csr_matrix
    scaled_stiffness: sp.csr_matrix
    lambda_max: float

    @property
    def inv_sqrt_mass(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.mass_diag)

    @property
    def size(self) -> int:
        return self.mass_diag.shape[0]


def triangle_geometry(mesh: Mesh):
    """Signed areas and barycentric-basis gradients, shape (n_tri,) and (n_tri, 2, 3)."""
    p = mesh.nodes[mesh.triangles]  # (n_tri, 3, 2)
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    j, k = [1, 2, 0], [2, 0, 1]
    grads = np.stack([y[:, j] - y[:, k], x[:, k] - x[:, j]], axis=1) / (2.0 * area[:, None, None])
    return area, grads


def centroid_metrics(mesh: Mesh, aniso: AnisotropyField) -> np.ndarray:
    """Metric per triangle: the average of its three node metrics."""
    node_metric = aniso.metric()
    if node_metric.shape[0] != mesh.n_nodes:
        raise ValueError("anisotropy field and mesh have different node counts")
    return node_metric[mesh.triangles].mean(axis=1)


def assemble_operators(mesh: Mesh, aniso: AnisotropyField) -> FemOperators:
    area, grads = triangle_geometry(mesh)
    g = centroid_metrics(mesh, aniso)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    if np.any(det <= 0) or np.any(g[:, 0, 0] <= 0) or not np.allclose(g[:, 0, 1], g[:, 1, 0]):
        raise AssemblyError("centroid metric is not symmetric positive definite")
    vol = area * np.sqrt(det)
    g_inv = np.empty_like(g)
    g_inv[:, 0, 0] = g[:, 1, 1] / det
    g_inv[:, 1, 1] = g[:, 0, 0] / det
    g_inv[:, 0, 1] = g_inv[:, 1, 0] = -g[:, 0, 1] / det

    n = mesh.n_nodes
    tri = mesh.triangles
    mass = np.bincount(tri.ravel(), weights=np.repeat(vol / 3.0, 3), minlength=n)

    local = vol[:, None, None] * np.einsum("tai,tab,tbj->tij", grads, g_inv, grads)
    local = 0.5 * (local + local.transpose(0, 2, 1)).ravel()
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    stiff = sp.csr_matrix((local, (rows, cols)), shape=(n, n))

    d = 1.0 / np.sqrt(mass)
    scaled = sp.csr_matrix((local * (d[rows] * d[cols]), (rows, cols)), shape=(n, n))
    gershgorin = float(np.max(np.asarray(abs(scaled).sum(axis=1)).ravel()))
    return FemOperators(mass_diag=mass, stiffness=stiff, scaled_stiffness=scaled,
                        lambda_max=1.01 * gershgorin)


# ---------------------------------------------------------------------------
# Spectral density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDensity:
    """Matern spectral density ``tau * (kappa^2 + lam)^(-(nu+1)/2)``, ``kappa = sqrt(8 nu)/a``."""

    tau: float
    range_a: float
    nu: float

    def __post_init__(self):
        if self.range_a <= 0 or self.nu <= 0 or self.tau < 0:
            raise ValueError("need tau >= 0, range_a > 0, nu > 0")

    @property
    def kappa(self) -> float:
        return float(np.sqrt(8.0 * self.nu) / self.range_a)

    def __call__(self, lam):
        return self.tau * (self.kappa**2 + np.asarray(lam, dtype=float)) ** (-(self.nu + 1.0) / 2.0)

    def squared(self) -> Callable:
        return lambda lam: self(lam) ** 2

    @classmethod
    def calibrated(cls, range_a: float, nu: float, target_variance: float = 1.0) -> "SpectralDensity":
        return cls(calibrate_tau(range_a, nu, target_variance), range_a, nu)


def spectral_density_eval(sd: SpectralDensity, lam: float) -> float:
    if lam < 0:
        raise ValueError(f"spectral density needs lambda >= 0, got {lam}")
    return float(sd(lam))


def calibrate_tau(range_a: float, nu: float, target_variance: float) -> float:
    """Amplitude giving marginal variance ``target_variance`` for the stationary
    planar field: ``var = tau^2 / (4 pi nu kappa^(2 nu))``."""
    if range_a <= 0 or nu <= 0 or target_variance < 0:
        raise ValueError("range_a and nu must be positive, target_variance non-negative")
    kappa = np.sqrt(8.0 * nu) / range_a
    return float(np.sqrt(target_variance * 4.0 * np.pi * nu * kappa ** (2.0 * nu)))


# ---------------------------------------------------------------------------
# Matrix functions and sampling
# ---------------------------------------------------------------------------


def chebyshev_coefficients(func: Callable, degree: int, lambda_max: float) -> np.ndarray:
    """Coefficients of the degree-``degree`` Chebyshev interpolant of ``func`` on [0, lambda_max]."""
    degree = int(degree)
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return npcheb.Chebyshev.interpolate(func, degree, domain=[0.0, lambda_max]).coef


def chebyshev_apply(ops: FemOperators, func: Callable, w: np.ndarray, degree: int) -> np.ndarray:
    """``P(S) w`` for the Chebyshev interpolant ``P`` of ``func`` on [0, lambda_max].

    ``w`` may be a vector or a matrix of column vectors.  Clenshaw's recurrence
    costs ``degree`` sparse products.
    """
    w = np.asarray(w, dtype=float)
    if w.shape[0] != ops.size:
        raise ValueError(f"vector length {w.shape[0]} does not match operator size {ops.size}")
    coef = chebyshev_coefficients(func, degree, ops.lambda_max)
    s = ops.scaled_stiffness
    scale = 2.0 / ops.lambda_max

    def t_apply(v):
        return scale * (s @ v) - v

    b1 = np.zeros_like(w)
    b2 = np.zeros_like(w)
    for c in coef[:0:-1]:
        b1, b2 = c * w + 2.0 * t_apply(b1) - b2, b1
    return coef[0] * w + t_apply(b1) - b2


@dataclass(frozen=True)
class FieldSample:
    values: np.ndarray
    seed_tag: int


def _extended_draw(ops, sd, n_nodes, seeds, degree):
    noise = np.column_stack([normal(make_rng(s, "prior"), n_nodes) for s in seeds])
    return ops.inv_sqrt_mass[:, None] * chebyshev_apply(ops, sd, noise, degree)


def sample_prior_extended(ops: FemOperators, sd: SpectralDensity, mesh: Mesh, rng_seed: int,
                          degree: int = 128) -> np.ndarray:
    """One draw over the full padded grid."""
    return _extended_draw(ops, sd, mesh.n_nodes, [rng_seed], degree)[:, 0]


def sample_prior(ops: FemOperators, sd: SpectralDensity, mesh: Mesh, rng_seed: int,
                 degree: int = 128) -> FieldSample:
    if degree < 1:
        raise ValueError("degree must be >= 1")
    z = sample_prior_extended(ops, sd, mesh, rng_seed, degree)
    return FieldSample(values=mesh.restrict(z), seed_tag=int(rng_seed))


def sample_prior_batch(ops: FemOperators, sd: SpectralDensity, mesh: Mesh, base_seed: int, n: int,
                       degree: int = 128, chunk: int = 2048) -> np.ndarray:
    """``n`` core-grid draws, row ``i`` identical to ``sample_prior`` with seed
    ``derive_seed(base_seed, i)``."""
    out = np.empty((n, mesh.n_core**2))
    for start in range(0, n, chunk):
        seeds = [derive_seed(base_seed, i) for i in range(start, min(n, start + chunk))]
        z = _extended_draw(ops, sd, mesh.n_nodes, seeds, degree)
        out[start:start + len(seeds)] = mesh.restrict(z.T)
    return out


def derive_seed(base_seed: int, index: int) -> int:
    """Per-item 63-bit seed from ``(base_seed, index)``."""
    return int(make_rng(base_seed, "derive", index).integers(0, 2**63 - 1))


def _check_cap(n: int, cap: int):
    if n > cap:
        raise TooLargeError(f"{n} unknowns exceed the dense cap of {cap}")


def scaled_stiffness_eigh(ops: FemOperators, cap: int = DENSE_CAP):
    _check_cap(ops.size, cap)
    lam, vec = np.linalg.eigh(ops.scaled_stiffness.toarray())
    return np.clip(lam, 0.0, None), vec


def dense_covariance_extended(ops: FemOperators, sd: SpectralDensity, cap: int = DENSE_CAP) -> np.ndarray:
    lam, vec = scaled_stiffness_eigh(ops, cap)
    f = ops.inv_sqrt_mass[:, None] * vec * sd(lam)
    cov = f @ f.T
    return 0.5 * (cov + cov.T)


def dense_covariance(ops: FemOperators, sd: SpectralDensity, mesh: Mesh, cap: int = DENSE_CAP) -> np.ndarray:
    """Core-grid covariance ``M^{-1/2} gamma^2(S) M^{-1/2}`` by dense eigendecomposition."""
    cov = dense_covariance_extended(ops, sd, cap)
    idx = mesh.core_index_map
    return cov[np.ix_(idx, idx)]


@dataclass(frozen=True, eq=False)
class FieldModel:
    """Convenience bundle: mesh, anisotropy, operators and spectral density."""

    mesh: Mesh
    aniso: AnisotropyField
    ops: FemOperators
    sd: SpectralDensity
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, mesh: Mesh, aniso: AnisotropyField, range_a: float, nu: float = 2.0,
              target_variance: float = 1.0, **params) -> "FieldModel":
        ops = assemble_operators(mesh, aniso)
        sd = SpectralDensity.calibrated(range_a, nu, target_variance)
        return cls(mesh, aniso, ops, sd, dict(range_a=range_a, nu=nu, **params))
