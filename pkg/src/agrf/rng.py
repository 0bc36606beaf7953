"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, which builds a
Philox 4x64 counter-based generator from a ``SeedSequence`` keyed by a base seed
and any number of integer or string keys.  Different keys give statistically
independent streams, so work can be split as ``make_rng(base, "ddpm", chunk)``
without coordinating state between workers.

Gaussian variates are produced by inverse-CDF transform of 53-bit uniforms on the
open interval (0, 1), which makes the mapping from stream to normals explicit and
reproducible in any language that can produce the same uniforms.
"""
from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri

_TWO53 = float(2**53)


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Return a Philox generator for ``(seed, *keys)``."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on (0, 1): ``(k + 0.5) / 2**53`` with ``k`` a 53-bit integer."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) / _TWO53


def normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws by inverse CDF."""
    return ndtri(uniform_open(rng, size))
