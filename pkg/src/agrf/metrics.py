"""Two-sample distances and proper scoring rules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .rng import make_rng, normal


@dataclass(frozen=True, eq=False)
class SampleEnsemble:
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("an ensemble needs at least one sample vector")
        if not np.all(np.isfinite(s)):
            raise ValueError("ensemble entries must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _as_ensemble(e) -> SampleEnsemble:
    return e if isinstance(e, SampleEnsemble) else SampleEnsemble(e)


def wasserstein_1d(a, b) -> float:
    """W1 between two equal-size empirical measures: mean gap of sorted samples."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size != b.size or a.size == 0:
        raise ValueError(f"need equal non-zero sizes, got {a.size} and {b.size}")
    return float(np.mean(np.abs(a - b)))


def random_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """``n`` directions uniform on the unit sphere, shape (dim, n)."""
    g = normal(rng, (n, dim))
    return (g / np.linalg.norm(g, axis=1, keepdims=True)).T


def max_sliced_wasserstein(e1, e2, n_slices: int = 2**12, rng_seed: int = 0, chunk: int = 256,
                           return_direction: bool = False):
    """Largest W1 between projections over ``n_slices`` random directions.

    The larger ensemble is subsampled (without replacement) to the size of the
    smaller one.  Directions come from one sequential stream, so a run with more
    slices sees a superset of the directions of a run with fewer.
    """
    e1, e2 = _as_ensemble(e1), _as_ensemble(e2)
    if e1.dim != e2.dim:
        raise ValueError(f"dimension mismatch: {e1.dim} vs {e2.dim}")
    if n_slices < 1:
        raise ValueError("n_slices must be >= 1")
    x, y = e1.samples, e2.samples
    m = min(x.shape[0], y.shape[0])
    sub = make_rng(rng_seed, "subsample")
    if x.shape[0] > m:
        x = x[np.sort(sub.permutation(x.shape[0])[:m])]
    if y.shape[0] > m:
        y = y[np.sort(sub.permutation(y.shape[0])[:m])]

    rng = make_rng(rng_seed, "slices")
    best, best_dir = 0.0, None
    done = 0
    while done < n_slices:
        k = min(chunk, n_slices - done)
        dirs = random_directions(rng, k, e1.dim)
        px = np.sort(x @ dirs, axis=0)
        py = np.sort(y @ dirs, axis=0)
        w = np.mean(np.abs(px - py), axis=0)
        i = int(np.argmax(w))
        if w[i] > best or best_dir is None:
            best, best_dir = float(w[i]), dirs[:, i]
        done += k
    return (best, best_dir) if return_direction else best


def _pair_sum_sorted(v: np.ndarray) -> float:
    """``sum_k sum_l |v_k - v_l|`` from the sorted gaps: ``2 sum_i i (m - i) (v_(i+1) - v_(i))``.

    Every term is non-negative, so equal samples give exactly zero.
    """
    v = np.sort(v)
    m = v.size
    i = np.arange(1, m)
    return float(2.0 * np.sum(i * (m - i) * np.diff(v)))


def crps(samples, y: float) -> float:
    """Ensemble CRPS: ``mean|Y - y| - sum|Y_k - Y_l| / (2 m^2)``."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("CRPS needs at least one sample")
    m = s.size
    return float(np.mean(np.abs(s - y)) - _pair_sum_sorted(s) / (2.0 * m * m))


def energy_score(samples, y) -> float:
    """Multivariate generalization of the CRPS with Euclidean norms."""
    e = _as_ensemble(samples)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (e.dim,):
        raise ValueError(f"observation has shape {y.shape}, ensemble dimension is {e.dim}")
    m = e.size
    first = np.mean(np.linalg.norm(e.samples - y, axis=1))
    pair = 2.0 * np.sum(pdist(e.samples)) if m > 1 else 0.0
    return float(first - pair / (2.0 * m * m))
