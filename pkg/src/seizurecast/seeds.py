"""Sub-seed derivation.

A single global seed fans out to component seeds by folding labels through
splitmix64::

    s = seed
    for label in labels:
        s = splitmix64(s ^ h(label))

where ``h`` is the identity for integers and CRC-32 of the UTF-8 bytes for
strings. Results are 64-bit unsigned integers, stable across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _label_hash(label) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        return int(label) & MASK64
    if isinstance(label, float):
        label = repr(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> int:
    s = int(seed) & MASK64
    for label in labels:
        s = splitmix64(s ^ _label_hash(label))
    return s


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
