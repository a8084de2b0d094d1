"""Partitioned build across P worker shards with an in-memory all-to-all.

Each shard stands in for one device: it owns a contiguous interval of the
global hash range and holds a local table for the keys that hash into it.
The build runs four phases, with a global barrier after the first two:

    1. partition   - every shard histograms its keys into coarse bins of the
                     global hash range; bin counts are reduced into a shared
                     counter; split points are found by binary search in the
                     global prefix sum so each shard receives ~N/P keys.
    2. preprocess  - every shard reorganizes its keys into a CSR with one
                     row per destination shard (count, prefix, place).
    3. all_to_all  - row d of every sender is handed to shard d. In-memory
                     buffer exchange; nothing is copied over a wire, but the
                     message accounting is kept.
    4. table_construction - each shard builds a local table over the keys it
                     received, with a local hash range of ceil(N_d / C).

Querying routes the query keys through the same partition plan, builds a
query-side table per shard, and intersects shard-locally; both sides of
every intersection share the shard's hash range by construction.
"""

from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import BuildCounters, HashGraph, _as_key_array, build_traced
from .errors import ConfigError
from .hashing import HashFamily, hash_array, hash_range_for
from .query import QueryResult, QueryStageTimes, build_query_table, intersect_tables

PHASE_NAMES = ("partition", "preprocess", "all_to_all", "table_construction")

PASS_NAMES = (
    "hash",
    "bin_count",
    "dest_search",
    "buffer_place",
    "exchange",
    "local_hash",
    "local_count",
    "local_place",
)


@dataclass(frozen=True)
class ShardConfig:
    """Build configuration. Zero means "derive it" for bins_g and hash_range."""

    shards: int
    load_factor: float = 1.0
    bins_g: int = 0  # 0: round(sqrt(hash_range)), clamped to >= shards
    family: HashFamily = HashFamily()
    hash_range: int = 0  # 0: ceil(total keys / load_factor)

    def __post_init__(self) -> None:
        if self.shards < 1:
            raise ConfigError(f"shard count must be >= 1, got {self.shards}")
        if self.load_factor <= 0:
            raise ConfigError(f"load factor must be positive, got {self.load_factor}")
        if self.bins_g < 0:
            raise ConfigError(f"bins_g must be >= 0, got {self.bins_g}")
        if self.hash_range < 0:
            raise ConfigError(f"hash_range must be >= 0, got {self.hash_range}")

    def resolve(self, total_keys: int) -> tuple[int, int, int]:
        """Concrete (hash_range, bins_g, bin_size) for an input of total_keys."""
        hr = self.hash_range or hash_range_for(total_keys, self.load_factor)
        bins = self.bins_g or max(self.shards, round(math.sqrt(hr)))
        if bins < self.shards:
            raise ConfigError(f"bins_g={bins} is less than shard count {self.shards}")
        bin_size = -(-hr // bins)
        return hr, bins, bin_size


@dataclass(frozen=True)
class PartitionPlan:
    """Hash-range ownership derived from global bin counts.

    bin_splits has P+1 entries in bin units; shard d owns hash values in
    [bin_splits[d] * bin_size, bin_splits[d+1] * bin_size). The top boundary
    may overshoot the hash range; no hash value lands there.
    """

    shards: int
    hash_range: int
    bins_g: int
    bin_size: int
    bin_splits: np.ndarray  # int64, length shards + 1

    def __post_init__(self) -> None:
        s = self.bin_splits
        if len(s) != self.shards + 1 or s[0] != 0 or s[-1] != self.bins_g:
            raise ConfigError(f"malformed bin splits {s}")
        if np.any(np.diff(s) < 0):
            raise ConfigError(f"bin splits not monotone: {s}")
        s.flags.writeable = False

    @property
    def boundaries(self) -> np.ndarray:
        """Shard boundaries in hash-value units."""
        return self.bin_splits * self.bin_size

    def shard_of(self, hashes: np.ndarray) -> np.ndarray:
        """Destination shard for each global hash value."""
        return np.searchsorted(self.boundaries, hashes, side="right") - 1


@dataclass(frozen=True)
class SendBuffers:
    """One shard's outgoing keys as a CSR with one row per destination."""

    offsets: np.ndarray  # int64, length shards + 1
    keys: np.ndarray  # uint32

    def __post_init__(self) -> None:
        if self.offsets[0] != 0 or self.offsets[-1] != len(self.keys):
            raise ConfigError("send buffer offsets do not cover the key array")
        if np.any(np.diff(self.offsets) < 0):
            raise ConfigError("send buffer offsets not monotone")

    @property
    def shards(self) -> int:
        return len(self.offsets) - 1

    def row(self, d: int) -> np.ndarray:
        return self.keys[self.offsets[d] : self.offsets[d + 1]]


@dataclass
class ExchangeFabric:
    """In-memory all-to-all: post a send CSR per shard, gather rows per shard."""

    shards: int
    posted: list = field(default_factory=list)
    keys_moved: int = 0
    bytes_moved: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if not self.posted:
            self.posted = [None] * self.shards

    def post(self, shard: int, buffers: SendBuffers) -> None:
        assert buffers.shards == self.shards, "send CSR row count != shard count"
        self.posted[shard] = buffers

    def gather(self, shard: int) -> np.ndarray:
        """Concatenate row `shard` of every sender, in ascending sender order."""
        rows = []
        for s in range(self.shards):
            sb = self.posted[s]
            assert sb is not None, f"shard {s} has not posted its buffers"
            rows.append(sb.row(shard))
        received = np.concatenate(rows) if rows else np.empty(0, dtype=np.uint32)
        with self._lock:
            self.keys_moved += len(received)
            self.bytes_moved += 4 * len(received)
        return received


@dataclass(frozen=True)
class ShardedHashGraph:
    """P local tables plus the plan that routes keys to them."""

    plan: PartitionPlan
    shards: list[HashGraph]
    family: HashFamily
    received_counts: list[int]

    @property
    def total_keys(self) -> int:
        return sum(self.received_counts)


@dataclass
class PhaseStats:
    time_ns: int = 0
    keys_touched: int = 0
    search_steps: int = 0
    bytes_exchanged: int = 0


@dataclass
class PhaseReport:
    """Per-phase wall times and deterministic instrumentation counters.

    Phase times are the mean across shards of in-phase time (barrier waits
    excluded), so they always sum to at most the total wall time. Pass
    counters are keys touched per named pass, summed over shards; these are
    functions of the data only and reproduce exactly across runs.
    """

    shards: int
    total_keys: int
    hash_range: int
    bins_g: int
    load_factor: float
    family: HashFamily
    phases: dict[str, PhaseStats]
    passes: dict[str, int]
    search_steps: int
    bytes_exchanged: int
    shard_received_counts: list[int]
    total_time_ns: int
    build_throughput: float

    def to_json_dict(self) -> dict:
        return {
            "schema": "phase-report-v1",
            "shards": self.shards,
            "total_keys": self.total_keys,
            "hash_range": self.hash_range,
            "bins_g": self.bins_g,
            "load_factor": self.load_factor,
            "family": self.family.kind.name.lower(),
            "seed": self.family.seed,
            "total_time_ns": self.total_time_ns,
            "build_throughput_keys_per_sec": self.build_throughput,
            "phases": {
                name: {
                    "time_ns": st.time_ns,
                    "keys_touched": st.keys_touched,
                    "search_steps": st.search_steps,
                    "bytes_exchanged": st.bytes_exchanged,
                }
                for name, st in self.phases.items()
            },
            "passes": dict(self.passes),
            "search_steps": self.search_steps,
            "bytes_exchanged": self.bytes_exchanged,
            "shard_received_counts": list(self.shard_received_counts),
        }


@dataclass(frozen=True)
class AuditVerdict:
    ok: bool
    violations: list[str]


def _splits_from_counts(bin_counter: np.ndarray, total_keys: int, shards: int) -> np.ndarray:
    """Split points so each shard's cumulative key mass reaches r * floor(N/P).

    Lower-bound search in the inclusive prefix sum: the split lands after the
    first bin whose cumulative count reaches the target, ties toward the
    smaller bin index. The final shard absorbs any remainder.
    """
    bins_g = len(bin_counter)
    cumulative = np.cumsum(bin_counter)
    per_shard = total_keys // shards
    splits = np.zeros(shards + 1, dtype=np.int64)
    targets = per_shard * np.arange(1, shards, dtype=np.int64)
    splits[1:shards] = np.searchsorted(cumulative, targets, side="left") + 1
    splits[shards] = bins_g
    return splits


def plan_partition(
    per_shard_inputs, hash_range: int, bins_g: int, family: HashFamily = HashFamily()
) -> PartitionPlan:
    """Phase 1 as a standalone operation: bin, reduce, prefix-sum, split.

    The result depends only on the input multiset (and hash parameters);
    shard membership and ordering of the inputs do not matter.
    """
    shards = len(per_shard_inputs)
    if shards < 1:
        raise ConfigError("need at least one shard input")
    if hash_range < 1:
        raise ConfigError(f"hash range must be >= 1, got {hash_range}")
    if bins_g < shards:
        raise ConfigError(f"bins_g={bins_g} is less than shard count {shards}")
    bin_size = -(-hash_range // bins_g)
    bin_counter = np.zeros(bins_g, dtype=np.int64)
    total = 0
    for keys in per_shard_inputs:
        arr = _as_key_array(keys)
        total += len(arr)
        if len(arr):
            hashed = hash_array(family, arr, hash_range)
            bin_counter += np.bincount(hashed // bin_size, minlength=bins_g)
    splits = _splits_from_counts(bin_counter, total, shards)
    return PartitionPlan(shards, hash_range, bins_g, bin_size, splits)


def _reorganize_hashed(
    keys: np.ndarray, hashed: np.ndarray, plan: PartitionPlan
) -> tuple[SendBuffers, int]:
    """Group a shard's keys by destination. Returns the CSR and the search cost.

    Routing uses a partition-point search over the shard boundaries; the cost
    counter records what the linear boundary scan would spend (dest + 1
    comparisons per key), which is the bound the work audit checks.
    """
    shards = plan.shards
    dest = plan.shard_of(hashed)
    steps = int(dest.sum() + len(dest)) if len(dest) else 0
    counts = np.bincount(dest, minlength=shards)
    offsets = np.zeros(shards + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    order = np.argsort(dest, kind="stable")
    return SendBuffers(offsets, keys[order]), steps


def reorganize(shard_keys, plan: PartitionPlan, family: HashFamily = HashFamily()) -> SendBuffers:
    """Phase 2 as a standalone operation: count/prefix/place by destination."""
    arr = _as_key_array(shard_keys)
    hashed = hash_array(family, arr, plan.hash_range) if len(arr) else np.empty(0, np.int64)
    buffers, _ = _reorganize_hashed(arr, hashed, plan)
    return buffers


def exchange(fabric: ExchangeFabric, all_buffers) -> list[np.ndarray]:
    """Phase 3 as a standalone operation: post every shard's CSR, gather rows."""
    if len(all_buffers) != fabric.shards:
        raise ConfigError(
            f"expected {fabric.shards} send buffers, got {len(all_buffers)}"
        )
    for s, sb in enumerate(all_buffers):
        fabric.post(s, sb)
    received = [fabric.gather(d) for d in range(fabric.shards)]
    total_sent = sum(len(sb.keys) for sb in all_buffers)
    total_received = sum(len(r) for r in received)
    assert total_sent == total_received, "exchange lost or duplicated keys"
    return received


def build_sharded(per_shard_inputs, config: ShardConfig):
    """Run the four-phase build; returns (ShardedHashGraph, PhaseReport).

    Shards are threads. Barriers sit after the partition and preprocess
    phases; the gather side of the exchange is safe as soon as the second
    barrier releases, because every shard posts its buffers before waiting.
    """
    p = config.shards
    if len(per_shard_inputs) != p:
        raise ConfigError(
            f"got {len(per_shard_inputs)} shard inputs for {p} shards"
        )
    arrays = [_as_key_array(k) for k in per_shard_inputs]
    total_keys = sum(len(a) for a in arrays)
    hr, bins_g, bin_size = config.resolve(total_keys)

    bin_counter = np.zeros(bins_g, dtype=np.int64)
    counter_lock = threading.Lock()
    barrier = threading.Barrier(p)
    fabric = ExchangeFabric(p)

    plans: list = [None] * p
    tables: list = [None] * p
    received_counts = [0] * p
    local_counters: list = [None] * p
    search_steps = [0] * p
    phase_ns = [[0, 0, 0, 0] for _ in range(p)]
    failures: list = [None] * p

    def worker(d: int) -> None:
        try:
            keys = arrays[d]
            # Phase 1: bin histogram, shared reduce, then (post-barrier)
            # prefix sum and split search; every shard derives the same plan
            # from the shared counters, which realizes the broadcast.
            t0 = time.perf_counter_ns()
            hashed = hash_array(config.family, keys, hr) if len(keys) else np.empty(0, np.int64)
            local_bins = (
                np.bincount(hashed // bin_size, minlength=bins_g)
                if len(keys)
                else np.zeros(bins_g, dtype=np.int64)
            )
            with counter_lock:
                np.add(bin_counter, local_bins, out=bin_counter)
            t1 = time.perf_counter_ns()
            barrier.wait()
            t2 = time.perf_counter_ns()
            splits = _splits_from_counts(bin_counter, total_keys, p)
            plans[d] = PartitionPlan(p, hr, bins_g, bin_size, splits)
            t3 = time.perf_counter_ns()
            phase_ns[d][0] = (t1 - t0) + (t3 - t2)

            # Phase 2: reorganize into the per-destination CSR and post it.
            buffers, steps = _reorganize_hashed(keys, hashed, plans[d])
            search_steps[d] = steps
            fabric.post(d, buffers)
            t4 = time.perf_counter_ns()
            phase_ns[d][1] = t4 - t3
            barrier.wait()

            # Phase 3: pull this shard's row from every sender.
            t5 = time.perf_counter_ns()
            received = fabric.gather(d)
            received_counts[d] = len(received)
            t6 = time.perf_counter_ns()
            phase_ns[d][2] = t6 - t5

            # Phase 4: local table over the received keys, local hash range.
            table, counters, _ = build_traced(
                received, config.load_factor, config.family, worker_count=1
            )
            tables[d] = table
            local_counters[d] = counters
            phase_ns[d][3] = time.perf_counter_ns() - t6
        except BaseException as exc:  # noqa: BLE001 - repropagated below
            failures[d] = exc
            barrier.abort()

    wall_start = time.perf_counter_ns()
    threads = [threading.Thread(target=worker, args=(d,), name=f"shard-{d}") for d in range(p)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total_ns = time.perf_counter_ns() - wall_start

    real = [e for e in failures if e is not None and not isinstance(e, threading.BrokenBarrierError)]
    if real:
        raise real[0]
    if any(failures):
        raise RuntimeError("sharded build aborted") from next(e for e in failures if e)

    for d in range(1, p):
        assert np.array_equal(plans[d].bin_splits, plans[0].bin_splits), (
            "shards derived different plans from identical counters"
        )
    assert fabric.keys_moved == total_keys, "exchange conservation violated"

    table = ShardedHashGraph(plans[0], tables, config.family, received_counts)

    n = total_keys
    steps_total = sum(search_steps)
    passes = {
        "hash": n,
        "bin_count": n,
        "dest_search": n,
        "buffer_place": n,
        "exchange": n,
        "local_hash": sum(c.hashed for c in local_counters),
        "local_count": sum(c.counted for c in local_counters),
        "local_place": sum(c.placed for c in local_counters),
    }
    mean_ns = [int(sum(phase_ns[d][i] for d in range(p)) / p) for i in range(4)]
    phases = {
        "partition": PhaseStats(time_ns=mean_ns[0], keys_touched=2 * n),
        "preprocess": PhaseStats(time_ns=mean_ns[1], keys_touched=2 * n, search_steps=steps_total),
        "all_to_all": PhaseStats(time_ns=mean_ns[2], keys_touched=n, bytes_exchanged=fabric.bytes_moved),
        "table_construction": PhaseStats(time_ns=mean_ns[3], keys_touched=3 * n),
    }
    throughput = (n / (total_ns / 1e9)) if (n and total_ns) else 0.0
    report = PhaseReport(
        shards=p,
        total_keys=n,
        hash_range=hr,
        bins_g=bins_g,
        load_factor=config.load_factor,
        family=config.family,
        phases=phases,
        passes=passes,
        search_steps=steps_total,
        bytes_exchanged=fabric.bytes_moved,
        shard_received_counts=received_counts,
        total_time_ns=total_ns,
        build_throughput=throughput,
    )
    return table, report


def query_sharded(table: ShardedHashGraph, queries, worker_count: int = 1) -> QueryResult:
    """Count each query key's table occurrences across all shards.

    Queries are routed through the table's own partition plan, so each query
    key meets exactly the shard that owns its hash interval; per-shard
    results are merged back into query order.
    """
    result, _ = query_sharded_timed(table, queries, worker_count)
    return result


def query_sharded_timed(
    table: ShardedHashGraph, queries, worker_count: int = 1
) -> tuple[QueryResult, QueryStageTimes]:
    """query_sharded() plus the query-table-build vs intersect time split."""
    q = _as_key_array(queries)
    plan = table.plan
    p = plan.shards

    t_route0 = time.perf_counter_ns()
    if len(q):
        hashed = hash_array(table.family, q, plan.hash_range)
        dest = plan.shard_of(hashed)
        counts = np.bincount(dest, minlength=p)
        offsets = np.zeros(p + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        order = np.argsort(dest, kind="stable")
        grouped = q[order]
    else:
        offsets = np.zeros(p + 1, dtype=np.int64)
        order = np.empty(0, dtype=np.int64)
        grouped = q
    route_ns = time.perf_counter_ns() - t_route0

    multiplicities = np.zeros(len(q), dtype=np.int64)
    shard_results: list = [None] * p
    build_ns = [0] * p
    intersect_ns = [0] * p

    def run_shard(d: int) -> None:
        chunk = grouped[offsets[d] : offsets[d + 1]]
        t0 = time.perf_counter_ns()
        qt, positions = build_query_table(table.shards[d], chunk)
        t1 = time.perf_counter_ns()
        res = intersect_tables(table.shards[d], qt, positions, worker_count)
        t2 = time.perf_counter_ns()
        build_ns[d] = t1 - t0
        intersect_ns[d] = t2 - t1
        shard_results[d] = res
        multiplicities[order[offsets[d] : offsets[d + 1]]] = res.multiplicities

    if p > 1:
        with ThreadPoolExecutor(max_workers=p) as pool:
            list(pool.map(run_shard, range(p)))
    else:
        run_shard(0)

    result = QueryResult(
        multiplicities=multiplicities,
        matched_positions=int(np.count_nonzero(multiplicities)),
        total_matches=int(multiplicities.sum()),
        comparisons=sum(r.comparisons for r in shard_results),
        hash_values=sum(r.hash_values for r in shard_results),
    )
    times = QueryStageTimes(
        table_build_ns=route_ns + int(sum(build_ns) / p),
        intersect_ns=int(sum(intersect_ns) / p),
    )
    return result, times


def work_audit(report: PhaseReport, total_keys: int, shards: int) -> AuditVerdict:
    """Check the build's counted work against the linear-cost model.

    Destination search may spend at most shards comparisons per key; every
    other pass must touch at most the input once.
    """
    violations = []
    bound = total_keys * shards
    if report.search_steps > bound:
        violations.append(
            f"dest_search steps {report.search_steps} exceed N*P = {bound}"
        )
    for name in PASS_NAMES:
        touched = report.passes.get(name)
        if touched is None:
            violations.append(f"missing pass counter {name!r}")
        elif name != "dest_search" and touched > total_keys:
            violations.append(f"pass {name!r} touched {touched} keys, bound is N = {total_keys}")
    return AuditVerdict(ok=not violations, violations=violations)
