"""Noise schedules and denoiser-driven samplers (variance-exploding convention).

All samplers start from ``x_T ~ N(0, (sigma_T^2 + 1) I)`` and walk the schedule
backwards to ``sigma_0``.  A denoiser is any callable ``D(x, sigma)`` accepting
a batch ``(n, dim)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import make_rng, normal


@dataclass(frozen=True)
class NoiseSchedule:
    """Increasing noise levels ``sigma_0 < ... < sigma_T``."""

    sigmas: np.ndarray
    rho: float = float("nan")

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("a schedule needs at least two noise levels")
        if s[0] < 0 or not np.all(np.diff(s) > 0):
            raise ValueError("noise levels must be non-negative and strictly increasing")
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self) -> int:
        """Number of transitions ``T``."""
        return self.sigmas.size - 1

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])

    def eta(self, t: int) -> float:
        """Std of the ancestral step into level ``t``; ``eta_T = sqrt(sigma_T^2 + 1)``."""
        s = self.sigmas
        if t == self.steps:
            return float(np.sqrt(s[-1] ** 2 + 1.0))
        return float(s[t] / s[t + 1] * np.sqrt(s[t + 1] ** 2 - s[t] ** 2))

    def with_zero(self) -> "NoiseSchedule":
        """Prepend ``sigma_0 = 0`` so the final ancestral step is a pure denoise."""
        if self.sigmas[0] == 0:
            return self
        return NoiseSchedule(np.concatenate([[0.0], self.sigmas]), self.rho)


def karras_schedule(steps: int, rho: float = 3.0, sigma_min: float = 2e-3, sigma_max: float = 80.0) -> NoiseSchedule:
    """``steps`` levels interpolating ``sigma^(1/rho)`` linearly between the endpoints."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not (0 < sigma_min < sigma_max):
        raise ValueError("need 0 < sigma_min < sigma_max")
    if rho <= 0:
        raise ValueError("rho must be positive")
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    ramp = np.linspace(0.0, 1.0, steps)
    sig = (lo + ramp * (hi - lo)) ** rho
    sig[0], sig[-1] = sigma_min, sigma_max
    return NoiseSchedule(sig, rho)


def _init(schedule, dim, rng_seed, n, tag):
    rng = make_rng(rng_seed, tag)
    shape = (1 if n is None else n, dim)
    x = schedule.eta(schedule.steps) * normal(rng, shape)
    return rng, x


def _finish(x, n):
    return x[0] if n is None else x


def ddpm_step(d, x, schedule: NoiseSchedule, t: int, noise=None) -> np.ndarray:
    """Ancestral step from level ``t + 1`` to ``t``."""
    s_from, s_to = schedule.sigmas[t + 1], schedule.sigmas[t]
    den = d(x, s_from)
    mean = den + (s_to**2 / s_from**2) * (x - den)
    if noise is None or s_to == 0:
        return mean
    return mean + schedule.eta(t) * noise


def ddpm_sample(d, schedule: NoiseSchedule, dim: int, rng_seed: int, n: int | None = None) -> np.ndarray:
    """Stochastic ancestral sampler.  Returns ``(dim,)`` or ``(n, dim)``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng, x = _init(schedule, dim, rng_seed, n, "ddpm")
    for t in range(schedule.steps - 1, -1, -1):
        noise = normal(rng, x.shape) if schedule.sigmas[t] > 0 else None
        x = ddpm_step(d, x, schedule, t, noise)
    return _finish(x, n)


def ddim_sample(d, schedule: NoiseSchedule, dim: int, rng_seed: int, n: int | None = None) -> np.ndarray:
    """Deterministic sampler ``x_t = D + (sigma_t / sigma_{t+1}) (x_{t+1} - D)``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if schedule.sigmas[0] <= 0:
        raise ValueError("DDIM needs sigma_0 > 0")
    _, x = _init(schedule, dim, rng_seed, n, "ddim")
    s = schedule.sigmas
    for t in range(schedule.steps - 1, -1, -1):
        den = d(x, s[t + 1])
        x = den + (s[t] / s[t + 1]) * (x - den)
    return _finish(x, n)


def heun_sample(d, schedule: NoiseSchedule, dim: int, rng_seed: int, n: int | None = None) -> np.ndarray:
    """Second-order integration of ``dx/dsigma = (x - D(x, sigma)) / sigma``;
    the corrector is skipped on the last step."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if schedule.sigmas[0] <= 0:
        raise ValueError("Heun needs sigma_0 > 0")
    _, x = _init(schedule, dim, rng_seed, n, "heun")
    s = schedule.sigmas
    for t in range(schedule.steps - 1, -1, -1):
        h = s[t] - s[t + 1]
        slope = (x - d(x, s[t + 1])) / s[t + 1]
        x_pred = x + h * slope
        if t == 0:
            x = x_pred
        else:
            slope2 = (x_pred - d(x_pred, s[t])) / s[t]
            x = x + 0.5 * h * (slope + slope2)
    return _finish(x, n)


SAMPLERS = {"ddpm": ddpm_sample, "ddim": ddim_sample, "heun": heun_sample}


def gaussian_output_variances(eigvals, schedule: NoiseSchedule, method: str) -> np.ndarray:
    """Exact output variance per prior eigendirection for DDPM or DDIM driven by
    the exact denoiser of ``N(0, C)``, ``eigvals`` being the eigenvalues of ``C``.

    Both samplers are then linear and act on each eigendirection separately, so
    the variance follows a scalar recursion from ``sigma_T^2 + 1``.
    """
    if method not in ("ddpm", "ddim"):
        raise ValueError(f"closed form available for ddpm and ddim, not {method!r}")
    lam = np.clip(np.asarray(eigvals, dtype=float), 0.0, None)
    s = schedule.sigmas
    v = np.full_like(lam, s[-1] ** 2 + 1.0)
    for t in range(schedule.steps - 1, -1, -1):
        ratio = (s[t] / s[t + 1]) ** (2 if method == "ddpm" else 1)
        gain = (lam + ratio * s[t + 1] ** 2) / (lam + s[t + 1] ** 2)
        v = gain * gain * v
        if method == "ddpm" and s[t] > 0:
            v = v + schedule.eta(t) ** 2
    return v


def vp_to_ve(alpha_t: float, x_vp: np.ndarray):
    """Map a variance-preserving state to the equivalent variance-exploding one:
    ``x_ve = x_vp / sqrt(alpha)``, ``sigma_ve = sqrt((1 - alpha) / alpha)``."""
    if not (0.0 < alpha_t <= 1.0):
        raise ValueError(f"alpha_t must lie in (0, 1], got {alpha_t}")
    x = np.asarray(x_vp, dtype=float)
    return float(np.sqrt((1.0 - alpha_t) / alpha_t)), x / np.sqrt(alpha_t)


def ve_score_to_vp(alpha_t: float, ve_score: np.ndarray) -> np.ndarray:
    """VP score at ``x`` from the VE score at ``x / sqrt(alpha)``.

    The densities satisfy ``p_vp(x) = alpha^(-d/2) p_ve(x / sqrt(alpha))``, so the
    chain rule gives a factor ``1 / sqrt(alpha)``.
    """
    if not (0.0 < alpha_t <= 1.0):
        raise ValueError(f"alpha_t must lie in (0, 1], got {alpha_t}")
    return np.asarray(ve_score, dtype=float) / np.sqrt(alpha_t)
