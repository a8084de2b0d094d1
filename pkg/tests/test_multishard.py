"""Four-phase sharded build: planning, routing, exchange, end-to-end queries."""

import numpy as np
import pytest

from hashgraph import (
    ConfigError,
    ExchangeFabric,
    HashFamily,
    SendBuffers,
    ShardConfig,
    build,
    build_sharded,
    exchange,
    hash_array,
    plan_partition,
    query_sharded,
    reorganize,
    work_audit,
)
from oracles import bucket_multisets, check_csr, count_queries, route_counts

IDENT = HashFamily.identity()
MURMUR = HashFamily.murmur32()


def test_plan_hand_example():
    plan = plan_partition([[0, 1], [2, 3]], hash_range=4, bins_g=4, family=IDENT)
    assert plan.bin_size == 1
    assert plan.bin_splits.tolist() == [0, 2, 4]
    assert plan.boundaries.tolist() == [0, 2, 4]
    assert plan.shard_of(np.array([0, 1, 2, 3])).tolist() == [0, 0, 1, 1]


def test_plan_single_shard_owns_everything():
    plan = plan_partition([[5, 6, 7]], hash_range=100, bins_g=10, family=IDENT)
    assert plan.bin_splits.tolist() == [0, 10]
    assert plan.shard_of(np.arange(100)).tolist() == [0] * 100


def test_plan_all_keys_identical():
    keys = np.full(5000, 77, dtype=np.uint32)
    parts = np.array_split(keys, 4)
    plan = plan_partition(parts, hash_range=5000, bins_g=70, family=MURMUR)
    assert np.all(np.diff(plan.bin_splits) >= 0)
    counts = route_counts(keys[:500], MURMUR, plan)
    assert sorted(counts)[-1] == 500  # a single shard receives every copy


def test_plan_balance_uniform_keys():
    rng = np.random.default_rng(89)
    keys = rng.integers(1, 1 << 20, size=1 << 20, dtype=np.uint32)
    parts = np.array_split(keys, 8)
    hr = 1 << 20
    plan = plan_partition(parts, hash_range=hr, bins_g=round(hr**0.5), family=MURMUR)
    hashed = hash_array(MURMUR, keys, hr)
    counts = np.bincount(plan.shard_of(hashed), minlength=8)
    target = len(keys) / 8
    assert np.all(np.abs(counts - target) <= 0.05 * target)


def test_plan_is_input_order_invariant():
    rng = np.random.default_rng(97)
    keys = rng.integers(0, 1 << 16, size=20_000, dtype=np.uint32)
    a = plan_partition(np.array_split(keys, 4), 1 << 16, 256, MURMUR)
    shuffled = keys.copy()
    rng.shuffle(shuffled)
    b = plan_partition(np.array_split(shuffled, 4), 1 << 16, 256, MURMUR)
    c = plan_partition([shuffled, [], [], []], 1 << 16, 256, MURMUR)
    assert np.array_equal(a.bin_splits, b.bin_splits)
    assert np.array_equal(a.bin_splits, c.bin_splits)


def test_plan_rejects_bad_config():
    with pytest.raises(ConfigError):
        plan_partition([[1], [2]], hash_range=4, bins_g=1, family=IDENT)
    with pytest.raises(ConfigError):
        plan_partition([[1], [2]], hash_range=0, bins_g=4, family=IDENT)
    with pytest.raises(ConfigError):
        plan_partition([], hash_range=4, bins_g=4, family=IDENT)


def test_reorganize_hand_example():
    plan = plan_partition([[0, 1], [2, 3]], hash_range=4, bins_g=4, family=IDENT)
    buffers = reorganize([0, 1, 2, 3], plan, IDENT)
    assert sorted(buffers.row(0).tolist()) == [0, 1]
    assert sorted(buffers.row(1).tolist()) == [2, 3]


def test_reorganize_empty_and_concentrated():
    plan = plan_partition([[0, 1], [2, 3]], hash_range=4, bins_g=4, family=IDENT)
    empty = reorganize([], plan, IDENT)
    assert empty.row(0).tolist() == [] and empty.row(1).tolist() == []

    all_one = reorganize([3, 3, 3, 3], plan, IDENT)
    assert all_one.row(0).tolist() == []
    assert all_one.row(1).tolist() == [3, 3, 3, 3]


def test_exchange_concatenation_order():
    a, b, c, d = (np.array([v], dtype=np.uint32) for v in (10, 11, 12, 13))
    s0 = SendBuffers(np.array([0, 1, 2]), np.concatenate([a, b]))
    s1 = SendBuffers(np.array([0, 1, 2]), np.concatenate([c, d]))
    received = exchange(ExchangeFabric(2), [s0, s1])
    assert received[0].tolist() == [10, 12]
    assert received[1].tolist() == [11, 13]


def test_exchange_single_shard_is_identity():
    sb = SendBuffers(np.array([0, 3]), np.array([7, 8, 9], dtype=np.uint32))
    received = exchange(ExchangeFabric(1), [sb])
    assert received[0].tolist() == [7, 8, 9]


def test_exchange_conserves_multisets():
    rng = np.random.default_rng(101)
    p = 8
    plan = plan_partition(
        [rng.integers(0, 1 << 16, size=2000, dtype=np.uint32) for _ in range(p)],
        1 << 16,
        300,
        MURMUR,
    )
    sends = [
        reorganize(rng.integers(0, 1 << 16, size=1500, dtype=np.uint32), plan, MURMUR)
        for _ in range(p)
    ]
    fabric = ExchangeFabric(p)
    received = exchange(fabric, sends)
    assert fabric.keys_moved == 8 * 1500
    assert fabric.bytes_moved == 4 * fabric.keys_moved
    for d in range(p):
        expected = np.sort(np.concatenate([sb.row(d) for sb in sends]))
        assert np.array_equal(np.sort(received[d]), expected)


def test_build_sharded_hand_example():
    cfg = ShardConfig(shards=2, family=IDENT, hash_range=4, bins_g=4)
    table, report = build_sharded([[0, 1], [2, 3]], cfg)
    assert sorted(table.shards[0].keys.tolist()) == [0, 1]
    assert sorted(table.shards[1].keys.tolist()) == [2, 3]
    for shard in table.shards:
        check_csr(shard)
    assert report.total_keys == 4
    assert report.shard_received_counts == [2, 2]


def test_single_shard_reduces_to_core_build():
    rng = np.random.default_rng(103)
    parts = [rng.integers(0, 1 << 14, size=5000, dtype=np.uint32) for _ in range(3)]
    merged = np.concatenate(parts)
    sharded, _ = build_sharded([merged], ShardConfig(shards=1, family=MURMUR))
    reference = build(merged, 1.0, MURMUR)
    assert sharded.shards[0].hash_range == reference.hash_range
    assert np.array_equal(sharded.shards[0].offset, reference.offset)
    for a, b in zip(bucket_multisets(sharded.shards[0]), bucket_multisets(reference)):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("shards", [1, 2, 4, 8])
def test_build_sharded_conservation_and_ownership(shards):
    rng = np.random.default_rng(107 + shards)
    keys = rng.integers(0, 1 << 18, size=1 << 16, dtype=np.uint32)
    parts = np.array_split(keys, shards)
    table, report = build_sharded(parts, ShardConfig(shards=shards, family=MURMUR))

    got = np.concatenate([s.keys for s in table.shards])
    assert np.array_equal(np.sort(got), np.sort(keys))
    assert sum(report.shard_received_counts) == len(keys)

    bounds = table.plan.boundaries
    for d, shard in enumerate(table.shards):
        if len(shard.keys):
            h = hash_array(MURMUR, shard.keys, table.plan.hash_range)
            assert h.min() >= bounds[d]
            assert h.max() < bounds[d + 1]
        check_csr(shard)


def test_build_sharded_uneven_and_empty_inputs():
    cfg = ShardConfig(shards=3, family=MURMUR)
    rng = np.random.default_rng(109)
    parts = [
        rng.integers(0, 1 << 12, size=n, dtype=np.uint32) for n in (4000, 0, 17)
    ]
    table, report = build_sharded(parts, cfg)
    assert report.total_keys == 4017
    assert sum(report.shard_received_counts) == 4017


def test_build_sharded_empty_input():
    table, report = build_sharded([[], []], ShardConfig(shards=2))
    assert report.total_keys == 0
    assert report.build_throughput == 0.0
    result = query_sharded(table, [1, 2, 3])
    assert result.multiplicities.tolist() == [0, 0, 0]


def test_query_sharded_hand_example():
    cfg = ShardConfig(shards=2, family=IDENT, hash_range=4, bins_g=4)
    table, _ = build_sharded([[0, 1], [2, 3]], cfg)
    result = query_sharded(table, [3, 9])
    assert result.multiplicities.tolist() == [1, 0]


def test_query_sharded_empty_queries():
    table, _ = build_sharded([[1, 2]], ShardConfig(shards=1))
    result = query_sharded(table, [])
    assert len(result.multiplicities) == 0


def test_query_sharded_inputs_as_queries():
    rng = np.random.default_rng(113)
    keys = rng.integers(1, 1 << 18, size=1 << 14, dtype=np.uint32)
    table, _ = build_sharded(list(np.array_split(keys, 4)), ShardConfig(shards=4))
    result = query_sharded(table, keys)
    assert np.all(result.multiplicities >= 1)
    assert np.array_equal(result.multiplicities, count_queries(keys, keys))


@pytest.mark.parametrize("shards", [1, 2, 4, 8, 16])
def test_query_sharded_matches_oracle(shards):
    rng = np.random.default_rng(127 + shards)
    keys = rng.integers(0, 1 << 15, size=1 << 15, dtype=np.uint32)
    queries = rng.integers(0, 1 << 15, size=1 << 14, dtype=np.uint32)
    table, _ = build_sharded(
        list(np.array_split(keys, shards)), ShardConfig(shards=shards, family=MURMUR)
    )
    result = query_sharded(table, queries)
    assert np.array_equal(result.multiplicities, count_queries(keys, queries))


def test_query_sharded_large_case():
    # Upper bound of the end-to-end contract: 2^22 keys across 16 shards.
    rng = np.random.default_rng(149)
    keys = rng.integers(1, 1 << 22, size=1 << 22, dtype=np.uint32)
    queries = rng.integers(1, 1 << 22, size=1 << 18, dtype=np.uint32)
    table, report = build_sharded(
        list(np.array_split(keys, 16)), ShardConfig(shards=16, family=MURMUR)
    )
    assert sum(report.shard_received_counts) == len(keys)
    result = query_sharded(table, queries)
    assert np.array_equal(result.multiplicities, count_queries(keys, queries))


def test_query_sharded_worker_count_identity():
    rng = np.random.default_rng(131)
    keys = rng.integers(0, 1 << 14, size=1 << 14, dtype=np.uint32)
    queries = rng.integers(0, 1 << 14, size=1 << 13, dtype=np.uint32)
    table, _ = build_sharded(list(np.array_split(keys, 4)), ShardConfig(shards=4))
    one = query_sharded(table, queries, worker_count=1)
    eight = query_sharded(table, queries, worker_count=8)
    assert np.array_equal(one.multiplicities, eight.multiplicities)
    assert one.comparisons == eight.comparisons


def test_work_audit_single_shard_steps():
    keys = np.arange(1000, dtype=np.uint32)
    _, report = build_sharded([keys], ShardConfig(shards=1, family=MURMUR))
    assert report.search_steps == 1000  # one boundary check per key
    assert work_audit(report, 1000, 1).ok


def test_work_audit_bounds_and_scaling():
    rng = np.random.default_rng(137)
    keys = rng.integers(0, 1 << 18, size=1 << 16, dtype=np.uint32)
    steps = {}
    for shards in (4, 8):
        parts = np.array_split(keys, shards)
        _, report = build_sharded(parts, ShardConfig(shards=shards, family=MURMUR))
        verdict = work_audit(report, len(keys), shards)
        assert verdict.ok, verdict.violations
        assert report.search_steps <= len(keys) * shards
        for name in ("hash", "bin_count", "local_hash", "local_count", "local_place"):
            assert report.passes[name] == len(keys)
        steps[shards] = report.search_steps
    assert steps[8] / steps[4] <= 2.0


def test_work_audit_flags_violations():
    keys = np.arange(100, dtype=np.uint32)
    _, report = build_sharded([keys], ShardConfig(shards=1))
    bad = work_audit(report, 10, 1)  # pretend N was smaller
    assert not bad.ok
    assert bad.violations


def test_phase_report_structure():
    rng = np.random.default_rng(139)
    keys = rng.integers(0, 1 << 12, size=1 << 12, dtype=np.uint32)
    _, report = build_sharded(list(np.array_split(keys, 2)), ShardConfig(shards=2))
    assert set(report.phases) == {"partition", "preprocess", "all_to_all", "table_construction"}
    assert all(st.time_ns >= 0 for st in report.phases.values())
    assert sum(st.time_ns for st in report.phases.values()) <= report.total_time_ns
    assert report.bytes_exchanged == 4 * report.total_keys
    assert report.build_throughput > 0
    d = report.to_json_dict()
    assert d["schema"] == "phase-report-v1"
    assert set(d["passes"]) == set(report.passes)


def test_build_sharded_rejects_bad_config():
    with pytest.raises(ConfigError):
        ShardConfig(shards=0)
    with pytest.raises(ConfigError):
        ShardConfig(shards=1, load_factor=0.0)
    with pytest.raises(ConfigError):
        build_sharded([[1], [2]], ShardConfig(shards=2, bins_g=1))
    with pytest.raises(ConfigError):
        build_sharded([[1]], ShardConfig(shards=2))


def test_config_auto_resolution():
    cfg = ShardConfig(shards=4, load_factor=0.5)
    hr, bins, bin_size = cfg.resolve(1 << 20)
    assert hr == 1 << 21
    assert bins == round((1 << 21) ** 0.5)
    assert bin_size == -(-hr // bins)

    tiny_hr, tiny_bins, _ = ShardConfig(shards=8).resolve(4)
    assert tiny_hr == 4
    assert tiny_bins == 8  # sqrt rule clamps to the shard count
