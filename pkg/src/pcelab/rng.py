"""Deterministic random streams keyed by (master seed, stream id).

Every stochastic component receives its own ``numpy.random.Generator`` backed by
the counter-based Philox bit generator. The Philox key is produced by
SplitMix64-mixing the master seed and the stream id, so two different stream ids
never share generator state and the same pair always reproduces the same draws.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for state ``x``."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64(*parts: int) -> int:
    """Fold any number of integers into one 64-bit stream id."""
    acc = 0x6A09E667F3BCC909
    for p in parts:
        acc = splitmix64(acc ^ (int(p) & MASK64))
    return acc


def derive_stream(master_seed: int, stream_id: int) -> np.random.Generator:
    key0 = splitmix64(int(master_seed) & MASK64)
    key1 = splitmix64((int(stream_id) & MASK64) ^ 0xD1B54A32D192ED03)
    key = np.array([key0, key1], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def child_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Stream for a structured key such as ``(seed, test_draw, purpose)``."""
    return derive_stream(master_seed, mix64(*key))


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng``; used when an algorithm needs sub-streams."""
    return int(rng.integers(0, 1 << 63))
