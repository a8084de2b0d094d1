"""Batch querying by table intersection.

A query set is answered by building a second table over the query keys with
the same hash range as the input table, then intersecting corresponding
buckets: bucket h of the query table against bucket h of the input table.
Every bucket pair is independent, so the intersections parallelize freely.

Results are positional: multiplicities[i] is the number of occurrences of
queries[i] in the table. Comparison counts follow the nested-scan cost model
(every element of the query bucket is checked against every element of the
table bucket; no early exit), which makes the duplicate-decay measurements
meaningful.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Bucket, HashGraph, build_traced
from .errors import ConfigError

# Cap the scratch size of the nested-scan kernel in intersect_buckets.
_PAIR_CHUNK = 1 << 22


@dataclass(frozen=True)
class QueryResult:
    """Per-position multiplicities plus aggregate counters."""

    multiplicities: np.ndarray  # int64, one entry per query position
    matched_positions: int  # positions with multiplicity > 0
    total_matches: int  # sum of multiplicities == total pairwise matches
    comparisons: int  # element comparisons under the nested-scan model
    hash_values: int  # bucket-pair intersections performed


@dataclass(frozen=True)
class QueryStageTimes:
    """Wall-time split of a query: building the query table vs intersecting."""

    table_build_ns: int
    intersect_ns: int

    @property
    def total_ns(self) -> int:
        return self.table_build_ns + self.intersect_ns


@dataclass(frozen=True)
class BucketIntersection:
    """Result of intersecting one bucket pair."""

    counts: np.ndarray  # occurrences in `a` of each entry of `b`
    total_matches: int
    comparisons: int


def intersect_buckets(a: Bucket, b: Bucket) -> BucketIntersection:
    """Count, for each key in b, its occurrences in a.

    Both buckets must come from tables with the same family, seed, and hash
    range; this function can only verify that the hash values agree.
    """
    if a.hash_value != b.hash_value:
        raise ConfigError(
            f"bucket hash values differ: {a.hash_value} != {b.hash_value}"
        )
    na, nb = len(a), len(b)
    counts = np.zeros(nb, dtype=np.int64)
    if na and nb:
        step = max(1, _PAIR_CHUNK // na)
        for lo in range(0, nb, step):
            chunk = b.entries[lo : lo + step]
            counts[lo : lo + len(chunk)] = (
                chunk[:, None] == a.entries[None, :]
            ).sum(axis=1)
    return BucketIntersection(counts, int(counts.sum()), na * nb)


def build_query_table(table: HashGraph, queries) -> tuple[HashGraph, np.ndarray]:
    """Build the query-side table with the input table's hash range.

    Returns the table and the position map: positions[p] is the index into
    `queries` of the key stored at slot p. Sharing the range is a
    correctness precondition of the intersection, so it is forced here
    rather than left to callers.
    """
    qt, _, positions = build_traced(
        queries, family=table.family, hash_range=table.hash_range
    )
    return qt, positions


def _bucket_ids(offset: np.ndarray, v: int) -> np.ndarray:
    return np.repeat(np.arange(v, dtype=np.int64), np.diff(offset))


def _count_slice(
    comp_table: np.ndarray,
    offset_a: np.ndarray,
    qt: HashGraph,
    q_hash: np.ndarray,
    h_lo: int,
    h_hi: int,
) -> tuple[slice, np.ndarray]:
    sl = slice(int(qt.offset[h_lo]), int(qt.offset[h_hi]))
    comp_q = (q_hash[sl].astype(np.uint64) << np.uint64(32)) | qt.keys[sl].astype(
        np.uint64
    )
    sub = comp_table[offset_a[h_lo] : offset_a[h_hi]]
    hi = np.searchsorted(sub, comp_q, side="right")
    lo = np.searchsorted(sub, comp_q, side="left")
    return sl, hi - lo


def intersect_tables(
    table: HashGraph,
    query_table: HashGraph,
    positions: np.ndarray,
    worker_count: int = 1,
) -> QueryResult:
    """Intersect corresponding buckets of a prebuilt query table.

    Counting inside a bucket pair uses a within-bucket sorted copy of the
    table keys, which yields exactly the nested-scan counts; the comparison
    counter is the nested-scan cost |A_h| * |B_h| summed over hash values.
    """
    if query_table.hash_range != table.hash_range:
        raise ConfigError(
            f"hash ranges differ: {query_table.hash_range} != {table.hash_range}"
        )
    if query_table.family != table.family:
        raise ConfigError("hash families differ between table and query table")
    if worker_count < 1:
        raise ConfigError(f"worker count must be >= 1, got {worker_count}")
    v = table.hash_range
    if v > 1 << 32:
        raise ConfigError(f"hash range {v} exceeds the 2^32 intersection limit")

    nq = query_table.num_keys
    result = np.zeros(nq, dtype=np.int64)
    # (hash, key) composite sorts bucket blocks in place and keys inside them.
    comp_table = (
        _bucket_ids(table.offset, v).astype(np.uint64) << np.uint64(32)
    ) | table.keys.astype(np.uint64)
    comp_table.sort()
    q_hash = _bucket_ids(query_table.offset, v)

    deg_a = np.diff(table.offset)
    deg_b = np.diff(query_table.offset)
    comparisons = int(np.dot(deg_a, deg_b))

    workers = min(worker_count, v)
    cuts = np.linspace(0, v, workers + 1, dtype=np.int64)
    jobs = [(int(cuts[i]), int(cuts[i + 1])) for i in range(workers) if cuts[i] < cuts[i + 1]]

    def run(job):
        h_lo, h_hi = job
        sl, counts = _count_slice(comp_table, table.offset, query_table, q_hash, h_lo, h_hi)
        result[positions[sl]] = counts

    if len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    return QueryResult(
        multiplicities=result,
        matched_positions=int(np.count_nonzero(result)),
        total_matches=int(result.sum()),
        comparisons=comparisons,
        hash_values=v,
    )


def intersect(table: HashGraph, queries, worker_count: int = 1) -> QueryResult:
    """Count each query key's occurrences in the table.

    Builds the query-side table (same hash range), then intersects bucket
    pairs; with worker_count > 1 the hash range is split across workers and
    every bucket pair is touched by exactly one of them.
    """
    result, _ = intersect_timed(table, queries, worker_count)
    return result


def intersect_timed(
    table: HashGraph, queries, worker_count: int = 1
) -> tuple[QueryResult, QueryStageTimes]:
    """intersect() plus the build-vs-intersect wall-time split."""
    t0 = time.perf_counter_ns()
    query_table, positions = build_query_table(table, queries)
    t1 = time.perf_counter_ns()
    result = intersect_tables(table, query_table, positions, worker_count)
    t2 = time.perf_counter_ns()
    return result, QueryStageTimes(table_build_ns=t1 - t0, intersect_ns=t2 - t1)
