"""Independent oracles used across the test suite.

Everything here deliberately avoids the library's vectorized hash and build
paths: bucket maps come from per-key scalar hashing into a dict, and query
counts come from plain sort-and-count over the raw input, with no hashing at
all. Tests compare library output against these.
"""

from collections import Counter

import numpy as np

from hashgraph import HashFamily, hash_key


def bucket_map(keys, family: HashFamily, hash_range: int) -> dict[int, Counter]:
    """Brute-force map from hash value to the multiset of keys stored there."""
    out: dict[int, Counter] = {}
    for key in keys:
        h = hash_key(family, int(key), hash_range)
        out.setdefault(h, Counter())[int(key) & 0xFFFFFFFF] += 1
    return out


def count_queries(input_keys, queries) -> np.ndarray:
    """Occurrences of each query key in the input array. No hashing involved."""
    inp = np.sort(np.asarray(input_keys, dtype=np.uint32))
    q = np.asarray(queries, dtype=np.uint32)
    return np.searchsorted(inp, q, side="right") - np.searchsorted(inp, q, side="left")


def route_counts(keys, family: HashFamily, plan) -> list[int]:
    """Keys per destination shard under a plan, computed per key with scalar hashing."""
    bounds = [int(b) for b in plan.boundaries]
    counts = [0] * plan.shards
    for key in keys:
        h = hash_key(family, int(key), plan.hash_range)
        d = max(i for i in range(plan.shards + 1) if bounds[i] <= h)
        counts[min(d, plan.shards - 1)] += 1
    return counts


def check_csr(table, input_keys=None, scalar_check_limit: int = 4096) -> None:
    """Assert every structural invariant of a built table.

    Hash consistency is verified with the vectorized hasher for all keys and
    re-verified with the scalar hasher for a prefix of each table (the two
    are proven equal in the hashing tests).
    """
    from hashgraph import hash_array

    v, offset, keys = table.hash_range, table.offset, table.keys
    assert v >= 1
    assert len(offset) == v + 1
    assert offset[0] == 0
    assert offset[-1] == len(keys)
    assert np.all(np.diff(offset) >= 0), "offset not monotone"

    if len(keys):
        hashed = hash_array(table.family, keys, v)
        owner = np.repeat(np.arange(v, dtype=np.int64), np.diff(offset))
        assert np.array_equal(hashed, owner), "key stored under the wrong hash value"
        for p in range(min(len(keys), scalar_check_limit)):
            assert hash_key(table.family, int(keys[p]), v) == owner[p]

    if input_keys is not None:
        inp = np.asarray(input_keys, dtype=np.uint32)
        assert len(keys) == len(inp)
        assert np.array_equal(np.sort(keys), np.sort(inp)), "key multiset changed"


def bucket_multisets(table) -> list[np.ndarray]:
    """Sorted copy of every bucket, for order-insensitive comparisons."""
    return [
        np.sort(table.keys[table.offset[h] : table.offset[h + 1]])
        for h in range(table.hash_range)
    ]
