"""Keyed random streams.

Every logical draw owns a generator derived from ``(seed, *key)`` so results do
not depend on execution order or worker count.
"""
from __future__ import annotations

import zlib
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def _label(k: str) -> int:
    return zlib.crc32(k.encode("utf-8"))


def _key_part(k) -> int:
    if isinstance(k, str):
        return _label(k)
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def stream(seed: int, *key) -> np.random.Generator:
    """Return an independent generator for ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key) -> int:
    """A 63-bit integer seed derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)
