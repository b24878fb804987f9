"""Seeded random streams.

Every random draw in the package comes from numpy's PCG64 bit generator,
seeded with ``SeedSequence(seed, spawn_key=(stream_id,))``. The stream id is
a stable CRC32 of a short purpose name, so independent consumers (split,
weight init, minibatch order, synthetic corpus) never share a stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, stream: str) -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))
