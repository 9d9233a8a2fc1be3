"""Counter-based random streams.

Every Monte Carlo sample owns the Philox substream addressed by
``(seed, tag, sample_index)``, so a sample is reproducible on its own and
independent of how work is split between threads. Normals come from the
inverse normal CDF of the stream's 53-bit uniforms.
"""
from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri


def _key(seed: int, tag: str) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())])
    return ss.generate_state(2, dtype=np.uint64)


def substream(seed: int, sample_index: int, tag: str = "noise") -> np.random.Philox:
    """Philox generator positioned at the start of a sample's counter block."""
    if sample_index < 0:
        raise ValueError("sample index must be non-negative")
    counter = np.array([0, 0, 0, int(sample_index)], dtype=np.uint64)
    return np.random.Philox(counter=counter, key=_key(seed, tag))


def uniform(seed: int, sample_index: int, n: int, tag: str = "noise") -> np.ndarray:
    """``n`` uniforms in the open interval ``(0, 1)``."""
    raw = substream(seed, sample_index, tag).random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normal(seed: int, sample_index: int, n: int, tag: str = "noise") -> np.ndarray:
    return ndtri(uniform(seed, sample_index, n, tag))


def standard_normal_block(seed: int, indices, n: int, tag: str = "noise") -> np.ndarray:
    """Normals for several samples, one column per sample index, shape ``(n, len(indices))``."""
    indices = list(indices)
    out = np.empty((n, len(indices)))
    for j, idx in enumerate(indices):
        out[:, j] = standard_normal(seed, idx, n, tag)
    return out
