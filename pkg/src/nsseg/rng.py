"""Seed derivation.

Every random stream in the package is seeded through ``derive_seed`` so that
stack generation, weight init, crop sampling and augmentation draws are pure
functions of a master seed plus a name/index path.
"""
import zlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x):
    x = (x + GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _token(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & MASK64


def derive_seed(seed, *path):
    """Mix ``seed`` with each element of ``path`` (ints or names) via SplitMix64."""
    s = int(seed) & MASK64
    for part in path:
        s = splitmix64(s ^ splitmix64(_token(part)))
    return s


def stack_seed(corpus_seed, index):
    return splitmix64((int(corpus_seed) + int(index) * GOLDEN) & MASK64)


def stream(seed, *path):
    return np.random.default_rng(derive_seed(seed, *path))
