"""Seeded random streams.

All randomness in the package flows through Philox (counter-based) generators
so that a given 64-bit seed produces the same stream on every platform.
Independent sub-streams are derived from (seed, key...) pairs, which lets the
training loop rebuild the exact stream of any step without replaying history.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Deterministic generator for `seed`, optionally forked by `keys`.

    Streams with distinct key tuples are statistically independent.
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
