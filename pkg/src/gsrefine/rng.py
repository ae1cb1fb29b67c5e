"""Counter-based seed derivation.

Every random draw in the package descends from one 64-bit master seed.
Sub-streams are keyed by a tuple of integers (stage id, node id, epoch, ...)
hashed with SplitMix64, so the result of one stage never depends on how many
draws another stage consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & MASK64


def derive_seed(seed: int, *keys) -> int:
    """Hash ``seed`` together with ``keys`` into a fresh 64-bit seed."""
    h = splitmix64(int(seed) & MASK64)
    for key in keys:
        h = splitmix64(h ^ _key_to_int(key))
    return h


def generator(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


class SplitMixStream:
    """Sequential SplitMix64 stream; mirrored exactly by the compiled kernels."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        # 53 random mantissa bits -> [0, 1)
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def below(self, n: int) -> int:
        return int(self.uniform() * n)
