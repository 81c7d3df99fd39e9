"""Named, seedable RNG streams.

Every randomized site (init, shuffling, sampling, dropout) receives its own
generator derived from (run seed, *tags), so inserting one more consumer never
perturbs the draws of another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def derive_rng(seed: int, *parts: int | str) -> np.random.Generator:
    """Child generator for (seed, parts); stable across platforms and runs."""
    entropy = [int(seed) & 0xFFFFFFFF] + [_key(p) for p in parts]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, lim: float = 2.0) -> np.ndarray:
    """Normal(0, std) resampled until all entries lie within ±lim·std."""
    out = rng.normal(0.0, std, size=shape)
    bound = lim * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out
