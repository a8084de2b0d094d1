"""Static hash tables stored as CSR bipartite graphs.

A table is an offset array over hash values plus a packed key array; bucket
h is the slice keys[offset[h]:offset[h+1]]. Batch lookup intersects the
table with a second table built over the query keys. The sharded build
partitions the hash range across worker shards, routes keys with an
all-to-all exchange, and builds one local table per shard.
"""

from .core import (
    Bucket,
    BuildCounters,
    HashGraph,
    build,
    build_traced,
    load_table,
    save_table,
)
from .errors import ConfigError, SnapshotFormatError
from .hashing import (
    HashFamily,
    HashKind,
    fmix32,
    hash_array,
    hash_key,
    hash_range_for,
)
from .multishard import (
    AuditVerdict,
    ExchangeFabric,
    PartitionPlan,
    PhaseReport,
    PhaseStats,
    SendBuffers,
    ShardConfig,
    ShardedHashGraph,
    build_sharded,
    exchange,
    plan_partition,
    query_sharded,
    query_sharded_timed,
    reorganize,
    work_audit,
)
from .query import (
    BucketIntersection,
    QueryResult,
    QueryStageTimes,
    build_query_table,
    intersect,
    intersect_buckets,
    intersect_tables,
    intersect_timed,
)
from .workload import (
    WorkloadKind,
    WorkloadSpec,
    duplicate_rate,
    generate,
    load_keys,
    save_keys,
    splitmix64_at,
)

__version__ = "0.1.0"

__all__ = [
    "AuditVerdict",
    "Bucket",
    "BucketIntersection",
    "BuildCounters",
    "ConfigError",
    "ExchangeFabric",
    "HashFamily",
    "HashGraph",
    "HashKind",
    "PartitionPlan",
    "PhaseReport",
    "PhaseStats",
    "QueryResult",
    "QueryStageTimes",
    "SendBuffers",
    "ShardConfig",
    "ShardedHashGraph",
    "SnapshotFormatError",
    "WorkloadKind",
    "WorkloadSpec",
    "build",
    "build_query_table",
    "build_sharded",
    "build_traced",
    "duplicate_rate",
    "exchange",
    "fmix32",
    "generate",
    "hash_array",
    "hash_key",
    "hash_range_for",
    "intersect",
    "intersect_buckets",
    "intersect_tables",
    "intersect_timed",
    "load_keys",
    "load_table",
    "plan_partition",
    "query_sharded",
    "query_sharded_timed",
    "reorganize",
    "save_keys",
    "save_table",
    "splitmix64_at",
    "work_audit",
]
