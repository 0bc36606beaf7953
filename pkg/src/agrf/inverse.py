"""Linear-Gaussian inverse problems ``y = A x + sigma_y * eps`` on the core grid.

Solvers: closed-form conjugate posterior, exact posterior for a finite mixture
prior, reconstruction-guided diffusion, and random-walk Metropolis-Hastings over
the parameters of a global-anisotropy field family.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .denoise import GaussianFieldPrior, MixturePrior, cholesky_with_jitter
from .diffusion import NoiseSchedule, ddpm_step
from .errors import EmptyMaskError, NumericalError
from .grf import FieldModel, Mesh, constant_anisotropy
from .rng import make_rng, normal, uniform_open

_LOG2PI = np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Measurement model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    """Either a coordinate mask (``rows`` are observed core-node indices) or a
    dense ``d_y x d_x`` matrix."""

    dim: int
    rows: np.ndarray | None = None
    matrix: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.rows is None) == (self.matrix is None):
            raise ValueError("give exactly one of rows (mask) or matrix")
        if self.rows is not None:
            rows = np.asarray(self.rows, dtype=np.int64)
            if rows.ndim != 1 or rows.size == 0:
                raise ValueError("a mask needs at least one index")
            if np.unique(rows).size != rows.size:
                raise ValueError("mask indices must be distinct")
            if rows.min() < 0 or rows.max() >= self.dim:
                raise ValueError("mask index out of range")
            object.__setattr__(self, "rows", rows)
        else:
            mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if mat.shape[1] != self.dim or mat.shape[0] < 1:
                raise ValueError(f"matrix must have shape (d_y, {self.dim})")
            object.__setattr__(self, "matrix", mat)

    @property
    def kind(self) -> str:
        return "mask" if self.rows is not None else "general-linear"

    @property
    def d_y(self) -> int:
        return self.rows.size if self.rows is not None else self.matrix.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"field has length {x.shape[-1]}, operator expects {self.dim}")
        return x[..., self.rows] if self.rows is not None else x @ self.matrix.T

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.rows is None:
            return r @ self.matrix
        out = np.zeros(r.shape[:-1] + (self.dim,))
        out[..., self.rows] = r
        return out

    def as_matrix(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        mat = np.zeros((self.d_y, self.dim))
        mat[np.arange(self.d_y), self.rows] = 1.0
        return mat


@dataclass(frozen=True, eq=False)
class Observation:
    y: np.ndarray
    sigma_y: float

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        if not self.sigma_y > 0:
            raise ValueError("sigma_y must be positive")
        object.__setattr__(self, "y", y)


def observe(op: MeasurementOperator, x: np.ndarray, sigma_y: float, rng_seed: int) -> Observation:
    """Noisy measurement of a field."""
    clean = op.apply(x)
    return Observation(clean + sigma_y * normal(make_rng(rng_seed, "observe"), clean.shape), sigma_y)


def uniform_mask(n_core: int, d_y: int, rng_seed: int) -> MeasurementOperator:
    dim = n_core * n_core
    if not (1 <= d_y <= dim):
        raise ValueError(f"d_y must lie in [1, {dim}], got {d_y}")
    rows = np.sort(make_rng(rng_seed, "uniform-mask").permutation(dim)[:d_y])
    return MeasurementOperator(dim, rows=rows, meta={"kind": "unif"})


def poisson_cluster_points(mean_clusters: float, radius: float, points_per_cluster: int,
                           rng: np.random.Generator):
    """Poisson number of uniform centers in [0, 1]^2, each with points at
    uniform angles on the circle of ``radius`` around it."""
    k = int(rng.poisson(mean_clusters))
    centers = uniform_open(rng, (k, 2))
    angles = 2.0 * np.pi * uniform_open(rng, (k, points_per_cluster))
    offsets = radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return centers, (centers[:, None, :] + offsets).reshape(-1, 2)


def clustered_mask(n_core: int, mean_clusters: float = 10.0, radius: float = 0.1,
                   points_per_cluster: int = 30, rng_seed: int = 0) -> MeasurementOperator:
    """Cluster-process mask; points are snapped to the nearest core node,
    points falling outside [0, 1]^2 are dropped, duplicates removed."""
    if mean_clusters <= 0 or radius < 0 or points_per_cluster < 1:
        raise ValueError("need mean_clusters > 0, radius >= 0, points_per_cluster >= 1")
    rng = make_rng(rng_seed, "clustered-mask")
    centers, pts = poisson_cluster_points(mean_clusters, radius, points_per_cluster, rng)
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    pts = pts[inside]
    if pts.shape[0] == 0:
        raise EmptyMaskError(f"cluster process produced no observed nodes ({centers.shape[0]} clusters)")
    grid = np.rint(pts * (n_core - 1)).astype(np.int64)
    rows = np.unique(grid[:, 1] * n_core + grid[:, 0])
    return MeasurementOperator(n_core * n_core, rows=rows,
                               meta={"kind": "clust", "n_clusters": int(centers.shape[0])})


def gaussian_log_likelihood(op: MeasurementOperator, obs: Observation, x: np.ndarray) -> float:
    """``log N(y; A x, sigma_y^2 I)``."""
    if obs.y.size != op.d_y:
        raise ValueError(f"observation length {obs.y.size} does not match operator rows {op.d_y}")
    r = obs.y - op.apply(x)
    return float(-0.5 * op.d_y * np.log(2.0 * np.pi * obs.sigma_y**2) - r @ r / (2.0 * obs.sigma_y**2))


# ---------------------------------------------------------------------------
# Gaussian conjugation
# ---------------------------------------------------------------------------


class GaussianPosterior(NamedTuple):
    mean: np.ndarray
    cov_factor: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    def sample(self, rng_seed: int, n: int | None = None) -> np.ndarray:
        rng = make_rng(rng_seed, "posterior")
        z = normal(rng, (1 if n is None else n, self.mean.size))
        x = self.mean + z @ self.cov_factor.T
        return x[0] if n is None else x


def _cross_covariances(prior: GaussianFieldPrior, op: MeasurementOperator):
    """``(A C, A C A^T)``."""
    cov = prior.covariance
    if op.rows is not None:
        ac = cov[op.rows]
        return ac, ac[:, op.rows]
    ac = op.matrix @ cov
    return ac, ac @ op.matrix.T


def observed_covariance(prior: GaussianFieldPrior, op: MeasurementOperator) -> np.ndarray:
    """``A C A^T``; uses Chebyshev products when the prior is above the dense cap."""
    if prior.is_dense:
        return _cross_covariances(prior, op)[1]
    a = op.as_matrix()
    ac = prior.cov_apply(a)
    out = ac @ a.T
    return 0.5 * (out + out.T)


def _check_obs(op, obs):
    if obs.y.size != op.d_y:
        raise ValueError(f"observation length {obs.y.size} does not match operator rows {op.d_y}")


def log_marginal_likelihood(prior: GaussianFieldPrior, op: MeasurementOperator, obs: Observation) -> float:
    """``log N(y; 0, A C A^T + sigma_y^2 I)``."""
    _check_obs(op, obs)
    k = observed_covariance(prior, op) + obs.sigma_y**2 * np.eye(op.d_y)
    fac = cholesky_with_jitter(k)
    z = sla.cho_solve(fac, obs.y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(fac[0])))
    return float(-0.5 * (obs.y @ z + logdet + op.d_y * _LOG2PI))


def conjugate_posterior(prior: GaussianFieldPrior, op: MeasurementOperator, obs: Observation) -> GaussianPosterior:
    """Posterior mean ``C A^T K^{-1} y`` and a lower factor of
    ``C - C A^T K^{-1} A C`` with ``K = A C A^T + sigma_y^2 I``."""
    _check_obs(op, obs)
    ac, aca = _cross_covariances(prior, op)
    fac = cholesky_with_jitter(aca + obs.sigma_y**2 * np.eye(op.d_y))
    lower = np.tril(fac[0])
    w = sla.solve_triangular(lower, ac, lower=True, check_finite=False)
    mean = w.T @ sla.solve_triangular(lower, obs.y, lower=True, check_finite=False)
    cov = prior.covariance - w.T @ w
    cov = 0.5 * (cov + cov.T)
    factor = np.tril(cholesky_with_jitter(cov)[0])
    return GaussianPosterior(mean, factor)


def mixture_posterior_weights(prior: MixturePrior, op: MeasurementOperator, obs: Observation):
    """Normalized log posterior component weights and the raw log-marginals."""
    log_marg = np.array([log_marginal_likelihood(c, op, obs) for c in prior.components])
    with np.errstate(divide="ignore"):
        logits = np.log(prior.weights) + log_marg
    return logits - logsumexp(logits), log_marg


def normalize_log_weights(logits: np.ndarray) -> np.ndarray:
    return np.asarray(logits) - logsumexp(logits)


def mixture_posterior_sample(prior: MixturePrior, op: MeasurementOperator, obs: Observation, rng_seed: int,
                             n: int | None = None, return_components: bool = False):
    """Exact draws: component ``i`` with probability proportional to
    ``w_i N(y; 0, A C_i A^T + sigma_y^2 I)``, then its conjugate posterior."""
    logw, _ = mixture_posterior_weights(prior, op, obs)
    rng = make_rng(rng_seed, "mixture-posterior")
    m = 1 if n is None else n
    comp = np.searchsorted(np.cumsum(np.exp(logw)), uniform_open(rng, m))
    comp = np.minimum(comp, len(prior.components) - 1)
    out = np.empty((m, prior.dim))
    for i in np.unique(comp):
        sel = np.flatnonzero(comp == i)
        post = conjugate_posterior(prior.components[i], op, obs)
        z = normal(make_rng(rng_seed, "mixture-posterior", int(i)), (sel.size, prior.dim))
        out[sel] = post.mean + z @ post.cov_factor.T
    if n is None:
        out, comp = out[0], comp[0]
    return (out, comp) if return_components else out


# ---------------------------------------------------------------------------
# Reconstruction-guided diffusion
# ---------------------------------------------------------------------------


def guided_sample(d, schedule: NoiseSchedule, op: MeasurementOperator, obs: Observation, zeta: float = 1.0,
                  rng_seed: int = 0, n: int | None = None) -> np.ndarray:
    """Ancestral sampling with a data-consistency correction after every step.

    From ``x_{t+1}`` the usual ancestral step is taken, then
    ``zeta / ||r|| * grad_x ||r||^2 / 2`` is subtracted, where
    ``r = A D(x_{t+1}, sigma_{t+1}) - y``.  The gradient is ``J^T A^T r`` with
    ``J`` the denoiser Jacobian, obtained from ``d.vjp``.  The norm
    normalization makes the step independent of ``sigma_y``.  With ``zeta = 0`` the
    trajectory coincides with :func:`ddpm_sample` for the same seed.
    """
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    _check_obs(op, obs)
    rng = make_rng(rng_seed, "ddpm")
    x = schedule.eta(schedule.steps) * normal(rng, (1 if n is None else n, op.dim))
    s = schedule.sigmas
    for t in range(schedule.steps - 1, -1, -1):
        noise = normal(rng, x.shape) if s[t] > 0 else None
        den = d(x, s[t + 1])
        step = den + (s[t] ** 2 / s[t + 1] ** 2) * (x - den)
        if noise is not None:
            step = step + schedule.eta(t) * noise
        if zeta > 0:
            r = op.apply(den) - obs.y
            norm = np.linalg.norm(r, axis=-1, keepdims=True)
            grad = d.vjp(x, s[t + 1], op.adjoint(r))
            step = step - zeta * grad / np.maximum(norm, 1e-300)
            if not np.all(np.isfinite(step)):
                raise NumericalError(f"non-finite guidance update at step {t}")
        x = step
    return x[0] if n is None else x


# ---------------------------------------------------------------------------
# Metropolis-Hastings over field parameters
# ---------------------------------------------------------------------------


class ParameterPosteriorState(NamedTuple):
    theta: tuple
    log_marginal: float


def reflect(v: float, lo: float, hi: float) -> float:
    """Fold ``v`` back into ``[lo, hi]`` by mirror reflection at the ends."""
    w = hi - lo
    u = (v - lo) % (2.0 * w)
    return lo + (2.0 * w - u if u > w else u)


class GlobalAnisotropyFamily:
    """Fields with one global direction: ``theta = (range_a, aniso_ratio, angle)``,
    ``rho1 = 1``, ``rho2 = aniso_ratio``, uniform prior on a box, angle modulo pi."""

    def __init__(self, mesh: Mesh, nu: float = 2.0, target_variance: float = 1.0,
                 a_range=(0.05, 0.3), ratio_range=(0.1, 1.0), angle_range=(0.0, np.pi),
                 degree: int = 128):
        self.mesh = mesh
        self.nu = nu
        self.target_variance = target_variance
        self.bounds = (tuple(a_range), tuple(ratio_range), tuple(angle_range))
        self.degree = degree

    def prior(self, theta) -> GaussianFieldPrior:
        a, ratio, angle = theta
        aniso = constant_anisotropy(self.mesh, 1.0, ratio, angle)
        model = FieldModel.build(self.mesh, aniso, a, self.nu, self.target_variance)
        return GaussianFieldPrior.from_model(model, degree=self.degree)

    def contains(self, theta) -> bool:
        a, ratio, angle = theta
        (a0, a1), (r0, r1), (t0, t1) = self.bounds
        return a0 <= a <= a1 and r0 <= ratio <= r1 and t0 <= angle < t1

    def log_prior(self, theta) -> float:
        if not self.contains(theta):
            return -np.inf
        return -float(sum(np.log(hi - lo) for lo, hi in self.bounds))

    def sample_prior(self, rng: np.random.Generator):
        u = uniform_open(rng, 3)
        return tuple(float(lo + ui * (hi - lo)) for ui, (lo, hi) in zip(u, self.bounds))

    def propose(self, theta, rng: np.random.Generator, scales) -> tuple:
        step = np.asarray(scales, dtype=float) * normal(rng, 3)
        (a0, a1), (r0, r1), (t0, t1) = self.bounds
        a = reflect(theta[0] + step[0], a0, a1)
        ratio = reflect(theta[1] + step[1], r0, r1)
        angle = t0 + (theta[2] + step[2] - t0) % (t1 - t0)
        return (a, ratio, angle)

    def log_proposal_ratio(self, theta_from, theta_to) -> float:
        return 0.0

    def default_scales(self, fraction: float = 0.05):
        return tuple(fraction * (hi - lo) for lo, hi in self.bounds)


class AtomFamily:
    """A finite set of parameter atoms with prior weights; proposals pick one of
    the other atoms uniformly (a symmetric kernel)."""

    def __init__(self, atoms: Sequence[tuple], weights=None, builder=None):
        self.atoms = [tuple(a) for a in atoms]
        w = np.full(len(self.atoms), 1.0 / len(self.atoms)) if weights is None else np.asarray(weights, float)
        self.weights = w / w.sum()
        self.builder = builder
        self._priors = {}

    def prior(self, theta) -> GaussianFieldPrior:
        theta = tuple(theta)
        if theta not in self._priors:
            self._priors[theta] = self.builder(theta)
        return self._priors[theta]

    def log_prior(self, theta) -> float:
        theta = tuple(theta)
        if theta not in self.atoms:
            return -np.inf
        with np.errstate(divide="ignore"):
            return float(np.log(self.weights[self.atoms.index(theta)]))

    def sample_prior(self, rng: np.random.Generator):
        return self.atoms[int(np.searchsorted(np.cumsum(self.weights), uniform_open(rng, 1)[0]))]

    def propose(self, theta, rng: np.random.Generator, scales) -> tuple:
        if len(self.atoms) == 1 or not np.any(np.asarray(scales) > 0):
            return tuple(theta)
        i = self.atoms.index(tuple(theta))
        j = int(rng.integers(0, len(self.atoms) - 1))
        return self.atoms[j + (j >= i)]

    def log_proposal_ratio(self, theta_from, theta_to) -> float:
        return 0.0

    def mixture(self) -> MixturePrior:
        return MixturePrior([self.prior(a) for a in self.atoms], self.weights)

    def default_scales(self, fraction: float = 0.05):
        return (1.0, 1.0, 1.0)


class _Target:
    """Caches ``log p(theta) + log N(y; 0, A C(theta) A^T + sigma_y^2 I)``."""

    def __init__(self, family, op, obs, cache_size=256):
        self.family, self.op, self.obs = family, op, obs
        self.cache = {}
        self.cache_size = cache_size

    def log_marginal(self, theta) -> float:
        key = tuple(float(t) for t in theta)
        val = self.cache.get(key)
        if val is None:
            val = log_marginal_likelihood(self.family.prior(theta), self.op, self.obs)
            if len(self.cache) >= self.cache_size:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = val
        return val

    def __call__(self, theta) -> float:
        lp = self.family.log_prior(theta)
        return lp if not np.isfinite(lp) else lp + self.log_marginal(theta)


def log_acceptance_ratio(family, op, obs, theta_from, theta_to, target=None) -> float:
    """``log [pi(to) q(from | to)] - log [pi(from) q(to | from)]``."""
    target = target or _Target(family, op, obs)
    return (target(theta_to) - target(theta_from)
            + family.log_proposal_ratio(theta_from, theta_to))


@dataclass
class McmcResult:
    states: list
    accepted: np.ndarray
    log_target: np.ndarray
    kept: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else 1.0

    @property
    def kept_states(self) -> list:
        return [self.states[i] for i in self.kept]

    def thetas(self, kept_only: bool = True) -> np.ndarray:
        states = self.kept_states if kept_only else self.states
        return np.array([s.theta for s in states], dtype=float)


def mh_mcmc_parameters(family, op: MeasurementOperator, obs: Observation, n_steps: int,
                       proposal_scales=None, rng_seed: int = 0, init=None,
                       burn_in: float = 0.2, thin: int = 10) -> McmcResult:
    """Random-walk Metropolis-Hastings on ``p(theta | y)``.

    Returns the full chain (``n_steps + 1`` states including the start) with the
    indices kept after discarding the first ``burn_in`` fraction and thinning.
    """
    if op.d_y > 2000:
        raise ValueError("marginal likelihood is dense; d_y must be <= 2000")
    scales = family.default_scales() if proposal_scales is None else tuple(proposal_scales)
    if len(scales) != 3 or any((not np.isfinite(s)) or s < 0 for s in scales):
        raise ValueError(f"proposal scales must be three non-negative numbers, got {scales}")
    if n_steps < 0 or thin < 1 or not (0.0 <= burn_in < 1.0):
        raise ValueError("need n_steps >= 0, thin >= 1, 0 <= burn_in < 1")
    rng = make_rng(rng_seed, "mcmc")
    target = _Target(family, op, obs)
    theta = tuple(family.sample_prior(rng) if init is None else init)
    logp = target(theta)
    if not np.isfinite(logp):
        raise ValueError(f"initial state {theta} has zero posterior density")
    states = [ParameterPosteriorState(theta, target.log_marginal(theta))]
    log_target = [logp]
    accepted = np.zeros(n_steps, dtype=bool)
    for k in range(n_steps):
        prop = family.propose(theta, rng, scales)
        logp_prop = target(prop)
        log_alpha = logp_prop - logp + family.log_proposal_ratio(theta, prop)
        if np.log(uniform_open(rng, 1)[0]) < log_alpha:
            theta, logp = prop, logp_prop
            accepted[k] = True
        states.append(ParameterPosteriorState(theta, target.log_marginal(theta)))
        log_target.append(logp)
    start = int(np.ceil(burn_in * len(states)))
    kept = np.arange(start, len(states))[::-1][::thin][::-1]
    return McmcResult(states, accepted, np.array(log_target), kept)


def posterior_field_draw(family, theta, op: MeasurementOperator, obs: Observation, rng_seed: int,
                         n: int | None = None) -> np.ndarray:
    """Field draw(s) from the conjugate posterior at fixed parameters."""
    return conjugate_posterior(family.prior(theta), op, obs).sample(rng_seed, n)


def many_short_chains(family, op, obs, n_chains: int, n_steps: int, proposal_scales=None,
                      rng_seed: int = 0, with_fields: bool = True):
    """Last state of each of ``n_chains`` independent chains, plus (optionally)
    one posterior field per chain drawn at that state."""
    thetas, fields = [], []
    for c in range(n_chains):
        res = mh_mcmc_parameters(family, op, obs, n_steps, proposal_scales,
                                 rng_seed=int(make_rng(rng_seed, "chain", c).integers(0, 2**62)),
                                 burn_in=0.0, thin=1)
        theta = res.states[-1].theta
        thetas.append(theta)
        if with_fields:
            fields.append(posterior_field_draw(family, theta, op, obs, rng_seed=c))
    return np.array(thetas), (np.array(fields) if with_fields else None)
