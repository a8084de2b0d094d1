"""Key-set generators for the benchmark experiments.

Two distributions: sequential keys 1..count, and uniform draws with
replacement from {1..2^k}. The random stream is SplitMix64 (state walks by
the 64-bit golden-ratio constant, three xorshift-multiply rounds per output),
evaluated at arbitrary indices so generation vectorizes; the low k bits of
each output select a key. Same spec, same array, always.

Duplicate rate is controlled from the table side: building with a hash range
of count / d makes each hash value carry d keys on average. The spec carries
an optional table_range_override for exactly that; generation itself never
reads it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, SnapshotFormatError

MASK64 = 0xFFFFFFFFFFFFFFFF

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_KEYFILE_MAGIC = b"KEY1"
_KEYFILE_HEADER = struct.Struct("<4sIQ")  # magic, k, count


class WorkloadKind(Enum):
    SEQUENTIAL = "seq"
    RANDOM_WITH_REPLACEMENT = "rand"


@dataclass(frozen=True)
class WorkloadSpec:
    """What to generate: distribution, key domain {1..2^k}, count, seed."""

    kind: WorkloadKind
    k: int
    count: int
    rng_seed: int = 0
    table_range_override: int | None = None  # hash range the bench should build with

    def __post_init__(self) -> None:
        if not 1 <= self.k <= 32:
            raise ConfigError(f"k must be in [1, 32], got {self.k}")
        if self.count < 0:
            raise ConfigError(f"count must be >= 0, got {self.count}")
        if not 0 <= self.rng_seed <= MASK64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        if self.table_range_override is not None and self.table_range_override < 1:
            raise ConfigError(
                f"table_range_override must be >= 1, got {self.table_range_override}"
            )


def splitmix64_at(seed: int, indices: np.ndarray) -> np.ndarray:
    """SplitMix64 outputs at the given stream indices (0-based), as uint64."""
    z = np.uint64(seed & MASK64) + (indices.astype(np.uint64) + np.uint64(1)) * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def generate(spec: WorkloadSpec) -> np.ndarray:
    """Materialize the key array for a spec. Deterministic.

    Keys lie in {1..2^k}; at k=32 the value 2^32 wraps to 0, so the domain is
    the full 32-bit space.
    """
    if spec.kind is WorkloadKind.SEQUENTIAL:
        if spec.count > 1 << spec.k:
            raise ConfigError(
                f"sequential workload of {spec.count} keys exceeds domain 2^{spec.k}"
            )
        return np.arange(spec.count, dtype=np.uint32) + np.uint32(1)
    z = splitmix64_at(spec.rng_seed, np.arange(spec.count, dtype=np.uint64))
    mask = np.uint64((1 << spec.k) - 1)
    return ((z & mask) + np.uint64(1)).astype(np.uint32)


def duplicate_rate(count: int, table_range: int) -> float:
    """Average occurrences per hash value: key count over hash range."""
    if table_range < 1:
        raise ConfigError(f"table range must be >= 1, got {table_range}")
    return count / table_range


def save_keys(keys: np.ndarray, k: int, path) -> None:
    """Write a key file: 16-byte header (magic, k, count), then raw u32 LE keys."""
    arr = np.asarray(keys, dtype=np.uint32)
    with open(path, "wb") as f:
        f.write(_KEYFILE_HEADER.pack(_KEYFILE_MAGIC, k, len(arr)))
        f.write(arr.astype("<u4").tobytes())


def load_keys(path) -> tuple[np.ndarray, int]:
    """Read a key file written by save_keys; returns (keys, k)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _KEYFILE_HEADER.size:
        raise SnapshotFormatError(f"{path}: truncated key file header")
    magic, k, count = _KEYFILE_HEADER.unpack_from(blob)
    if magic != _KEYFILE_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {magic!r}")
    expected = _KEYFILE_HEADER.size + 4 * count
    if len(blob) != expected:
        raise SnapshotFormatError(
            f"{path}: body is {len(blob)} bytes, expected {expected} for count={count}"
        )
    keys = np.frombuffer(blob, dtype="<u4", count=count, offset=_KEYFILE_HEADER.size)
    return keys.astype(np.uint32), k
