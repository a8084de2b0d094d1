"""Hash family used by every table in this package.

Two kinds are provided:

    murmur32  - the 32-bit Murmur-style avalanche finalizer applied to
                (key XOR seed), then reduced modulo the table range.
    identity  - key mod range; useful when a test needs hand-computable
                bucket layouts.

Both are pure functions of (kind, seed, key, range) and are safe to call
from any number of threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .errors import ConfigError

MASK32 = 0xFFFFFFFF

# Avalanche constants of the 32-bit Murmur3 finalizer.
_FMIX_C1 = 0x85EBCA6B
_FMIX_C2 = 0xC2B2AE35


class HashKind(Enum):
    """Hash function selector. Values double as the snapshot encoding."""

    MURMUR32 = 0
    IDENTITY = 1


@dataclass(frozen=True)
class HashFamily:
    """A concrete hash function: kind plus seed.

    The seed is XORed into the key before mixing (murmur32) and ignored by
    identity. Equal families hash equal keys to equal values, always.
    """

    kind: HashKind = HashKind.MURMUR32
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= MASK32:
            raise ConfigError(f"seed must be a 32-bit unsigned integer, got {self.seed}")

    @classmethod
    def murmur32(cls, seed: int = 0) -> "HashFamily":
        return cls(HashKind.MURMUR32, seed)

    @classmethod
    def identity(cls) -> "HashFamily":
        return cls(HashKind.IDENTITY, 0)


def hash_range_for(count: int, load_factor: float) -> int:
    """Number of hash values for `count` keys at the given load factor.

    ceil(count / load_factor), floored at 1 so the range is never empty.
    """
    if load_factor <= 0:
        raise ConfigError(f"load factor must be positive, got {load_factor}")
    if count < 0:
        raise ConfigError(f"key count must be non-negative, got {count}")
    raw = count / load_factor
    if not math.isfinite(raw) or raw > 1 << 62:
        raise ConfigError(f"hash range {raw} overflows the 64-bit index width")
    return max(1, math.ceil(raw))


def fmix32(h: int) -> int:
    """32-bit avalanche finalizer (xor-shift / multiply cascade)."""
    h &= MASK32
    h ^= h >> 16
    h = (h * _FMIX_C1) & MASK32
    h ^= h >> 13
    h = (h * _FMIX_C2) & MASK32
    h ^= h >> 16
    return h


def hash_key(family: HashFamily, key: int, hash_range: int) -> int:
    """Hash a single 32-bit key into [0, hash_range)."""
    if hash_range < 1:
        raise ConfigError(f"hash range must be >= 1, got {hash_range}")
    key &= MASK32
    if family.kind is HashKind.IDENTITY:
        return key % hash_range
    return fmix32(key ^ family.seed) % hash_range


def hash_array(family: HashFamily, keys: np.ndarray, hash_range: int) -> np.ndarray:
    """Vectorized hash_key over a uint32 array; returns int64 values in [0, hash_range).

    Bit-identical to calling hash_key per element.
    """
    if hash_range < 1:
        raise ConfigError(f"hash range must be >= 1, got {hash_range}")
    keys = np.asarray(keys, dtype=np.uint32)
    if family.kind is HashKind.IDENTITY:
        return (keys.astype(np.uint64) % np.uint64(hash_range)).astype(np.int64)
    h = keys ^ np.uint32(family.seed)
    h = h ^ (h >> np.uint32(16))
    h = h * np.uint32(_FMIX_C1)  # uint32 arithmetic wraps, matching the scalar mask
    h = h ^ (h >> np.uint32(13))
    h = h * np.uint32(_FMIX_C2)
    h = h ^ (h >> np.uint32(16))
    return (h.astype(np.uint64) % np.uint64(hash_range)).astype(np.int64)
