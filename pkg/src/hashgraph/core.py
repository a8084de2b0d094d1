"""Single-shard table: a static hash table stored as a CSR bipartite graph.

The table is two arrays. `offset` has one entry per hash value plus a
terminator; `offset[h+1] - offset[h]` is the number of keys hashing to h.
`keys` packs the input keys grouped by hash value, so bucket h is the slice
`keys[offset[h]:offset[h+1]]`.

Building runs three passes over the input: hash every key, histogram the
hashed values (the bucket degrees), exclusive-prefix-sum the histogram into
`offset`, then place each key at its bucket's running counter. Placement
cost is amortized O(1) per key no matter how many duplicates the input has.
Order inside a bucket is unspecified; all equality contracts here are
multiset equality.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SnapshotFormatError
from .hashing import MASK32, HashFamily, HashKind, hash_array, hash_key, hash_range_for

_SNAPSHOT_MAGIC = b"HGR1"
_SNAPSHOT_HEADER = struct.Struct("<QQBId")  # V, N, family kind, seed, load factor

# Below this many keys a parallel build is all overhead.
_PARALLEL_MIN_KEYS = 1 << 14


@dataclass(frozen=True)
class Bucket:
    """Read-only view of the keys stored under one hash value."""

    hash_value: int
    entries: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class BuildCounters:
    """Keys touched by each build pass; every pass is linear in the input."""

    hashed: int
    counted: int
    placed: int

    @property
    def total(self) -> int:
        return self.hashed + self.counted + self.placed


@dataclass(frozen=True)
class HashGraph:
    """The CSR pair plus the parameters that produced it. Immutable."""

    offset: np.ndarray  # int64, length hash_range + 1, offset[0] == 0
    keys: np.ndarray  # uint32, length N, grouped by hash value
    hash_range: int
    family: HashFamily
    load_factor: float

    @property
    def num_keys(self) -> int:
        return int(self.offset[-1])

    def bucket(self, h: int) -> Bucket:
        if not 0 <= h < self.hash_range:
            raise IndexError(f"hash value {h} outside [0, {self.hash_range})")
        return Bucket(h, self.keys[self.offset[h] : self.offset[h + 1]])

    def contains(self, key: int) -> int:
        """Number of occurrences of `key` in the table (0 when absent)."""
        h = hash_key(self.family, key, self.hash_range)
        entries = self.keys[self.offset[h] : self.offset[h + 1]]
        return int(np.count_nonzero(entries == np.uint32(key & MASK32)))


def _as_key_array(keys) -> np.ndarray:
    arr = np.asarray(keys, dtype=np.uint32)
    if arr.ndim != 1:
        raise ConfigError(f"keys must be one-dimensional, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    step = -(-n // workers)
    return [(lo, min(lo + step, n)) for lo in range(0, n, step)]


def _place_serial(keys: np.ndarray, hashed: np.ndarray, v: int):
    counts = np.bincount(hashed, minlength=v)
    offset = np.zeros(v + 1, dtype=np.int64)
    np.cumsum(counts, out=offset[1:])
    order = np.argsort(hashed, kind="stable")
    return offset, keys[order], order.astype(np.int64)


def _place_parallel(keys: np.ndarray, hashed: np.ndarray, v: int, workers: int):
    n = len(keys)
    bounds = _chunk_bounds(n, workers)

    def count_chunk(b):
        lo, hi = b
        return np.bincount(hashed[lo:hi], minlength=v)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunk_counts = list(pool.map(count_chunk, bounds))

        counts = np.zeros(v, dtype=np.int64)
        for c in chunk_counts:
            counts += c
        offset = np.zeros(v + 1, dtype=np.int64)
        np.cumsum(counts, out=offset[1:])

        # Each chunk owns a reserved slot range per bucket: the bucket offset
        # plus the space claimed by earlier chunks. Writes never overlap.
        placed = np.empty(n, dtype=np.uint32)
        positions = np.empty(n, dtype=np.int64)
        starts = offset[:v].copy()

        def place_chunk(args):
            (lo, hi), base = args
            h = hashed[lo:hi]
            order = np.argsort(h, kind="stable")
            sorted_h = h[order]
            # Rank of each entry within its run of equal hash values.
            run_first = np.searchsorted(sorted_h, sorted_h, side="left")
            slots = base[sorted_h] + (np.arange(hi - lo, dtype=np.int64) - run_first)
            placed[slots] = keys[lo:hi][order]
            positions[slots] = order + lo

        chunk_bases = []
        running = starts
        for c in chunk_counts:
            chunk_bases.append(running)
            running = running + c
        list(pool.map(place_chunk, zip(bounds, chunk_bases)))

    return offset, placed, positions


def _build_arrays(keys: np.ndarray, v: int, family: HashFamily, workers: int):
    hashed = hash_array(family, keys, v)
    if workers > 1 and len(keys) >= _PARALLEL_MIN_KEYS:
        offset, placed, positions = _place_parallel(keys, hashed, v, workers)
    else:
        offset, placed, positions = _place_serial(keys, hashed, v)
    n = len(keys)
    return offset, placed, positions, BuildCounters(hashed=n, counted=n, placed=n)


def _freeze(table: HashGraph) -> HashGraph:
    table.offset.flags.writeable = False
    table.keys.flags.writeable = False
    return table


def build(
    keys,
    load_factor: float = 1.0,
    family: HashFamily = HashFamily(),
    worker_count: int = 1,
    hash_range: int | None = None,
) -> HashGraph:
    """Build a table over `keys`.

    The hash range defaults to ceil(N / load_factor), floored at 1; pass
    `hash_range` to pin it explicitly (e.g. to match another table). With
    worker_count > 1 the counting and placement passes run data-parallel
    over input chunks; the resulting offsets and bucket multisets do not
    depend on the worker count.
    """
    table, _, _ = build_traced(keys, load_factor, family, worker_count, hash_range)
    return table


def build_traced(
    keys,
    load_factor: float = 1.0,
    family: HashFamily = HashFamily(),
    worker_count: int = 1,
    hash_range: int | None = None,
) -> tuple[HashGraph, BuildCounters, np.ndarray]:
    """build() plus instrumentation.

    Returns (table, per-pass touch counters, positions) where positions[p]
    is the input index of the key stored at keys[p]. The positions array is
    transient build state, not part of the table.
    """
    arr = _as_key_array(keys)
    if worker_count < 1:
        raise ConfigError(f"worker count must be >= 1, got {worker_count}")
    if hash_range is None:
        v = hash_range_for(len(arr), load_factor)
    else:
        if load_factor <= 0:
            raise ConfigError(f"load factor must be positive, got {load_factor}")
        if hash_range < 1:
            raise ConfigError(f"hash range must be >= 1, got {hash_range}")
        v = int(hash_range)
    offset, placed, positions, counters = _build_arrays(arr, v, family, worker_count)
    table = _freeze(HashGraph(offset, placed, v, family, float(load_factor)))
    return table, counters, positions


def save_table(table: HashGraph, path) -> None:
    """Write the binary snapshot: magic, header, offsets as u64 LE, keys as u32 LE."""
    header = _SNAPSHOT_HEADER.pack(
        table.hash_range,
        table.num_keys,
        table.family.kind.value,
        table.family.seed,
        table.load_factor,
    )
    with open(path, "wb") as f:
        f.write(_SNAPSHOT_MAGIC)
        f.write(header)
        f.write(table.offset.astype("<u8").tobytes())
        f.write(table.keys.astype("<u4").tobytes())


def load_table(path) -> HashGraph:
    """Read a snapshot written by save_table; validates magic and lengths."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic {blob[:4]!r}")
    body = blob[4:]
    if len(body) < _SNAPSHOT_HEADER.size:
        raise SnapshotFormatError(f"{path}: truncated header")
    v, n, kind, seed, load_factor = _SNAPSHOT_HEADER.unpack_from(body)
    try:
        family = HashFamily(HashKind(kind), seed)
    except ValueError as e:
        raise SnapshotFormatError(f"{path}: unknown hash family {kind}") from e
    expected = _SNAPSHOT_HEADER.size + 8 * (v + 1) + 4 * n
    if len(body) != expected:
        raise SnapshotFormatError(
            f"{path}: body is {len(body)} bytes, expected {expected} for V={v} N={n}"
        )
    off_end = _SNAPSHOT_HEADER.size + 8 * (v + 1)
    offset = np.frombuffer(body, dtype="<u8", count=v + 1, offset=_SNAPSHOT_HEADER.size)
    keys = np.frombuffer(body, dtype="<u4", count=n, offset=off_end)
    table = HashGraph(
        offset.astype(np.int64), keys.astype(np.uint32), v, family, load_factor
    )
    if table.offset[0] != 0 or table.offset[-1] != n or np.any(np.diff(table.offset) < 0):
        raise SnapshotFormatError(f"{path}: corrupt offset array")
    return _freeze(table)
