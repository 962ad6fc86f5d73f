"""Counter-based Gaussian streams.

Each stream is a Philox-4x64 generator keyed by a stable hash of
``(seed, label)``. Normal number ``k`` of a stream is built from raw words
``2k`` and ``2k + 1`` with the Box-Muller cosine branch::

    u1 = (w0 >> 11 + 1) * 2**-53        # in (0, 1]
    u2 = (w1 >> 11) * 2**-53            # in [0, 1)
    z  = sqrt(-2 log u1) * cos(2 pi u2)

so every variate is a pure function of ``(seed, label, k)`` and any
sub-range can be generated without touching the rest of the stream.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_key", "standard_normals"]

_WORDS_PER_BLOCK = 4


def stream_key(seed: int, label: str) -> np.ndarray:
    """128-bit Philox key derived from ``seed`` and ``label``."""
    h = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return np.frombuffer(h[:16], dtype="<u8").copy()


def standard_normals(seed: int, label: str, count: int,
                     offset: int = 0) -> np.ndarray:
    """Normals ``offset, ..., offset + count - 1`` of the stream."""
    if count < 0 or offset < 0:
        raise ValueError("count and offset must be non-negative")
    start = 2 * offset
    block, skip = divmod(start, _WORDS_PER_BLOCK)
    bg = np.random.Philox(key=stream_key(seed, label), counter=block)
    raw = bg.random_raw(skip + 2 * count)[skip:]
    u1 = ((raw[0::2] >> np.uint64(11)) + np.uint64(1)) * 2.0**-53
    u2 = (raw[1::2] >> np.uint64(11)) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
