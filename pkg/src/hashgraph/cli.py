"""Benchmark harness CLI.

Subcommands:

    build   generate a workload, run the sharded build, write a phase report
    query   build or load a table, run a query workload against it
    sweep   repeat build (and optionally query) along one axis, write CSV

Reports are JSON by default; sweeps are CSV with a fixed, documented column
order. Exit codes: 0 success, 2 usage error, 3 runtime failure. All
instrumentation counters are deterministic for fixed seeds; wall times are
not.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from .core import load_table, save_table
from .errors import ConfigError, SnapshotFormatError
from .hashing import HashFamily, HashKind, hash_range_for
from .multishard import ShardConfig, build_sharded, query_sharded_timed
from .query import intersect_timed
from .workload import WorkloadKind, WorkloadSpec, generate, load_keys, save_keys

SWEEP_COLUMNS = [
    "axis",
    "value",
    "shards",
    "total_keys",
    "hash_range",
    "bins_g",
    "time_partition_ns",
    "time_preprocess_ns",
    "time_all_to_all_ns",
    "time_table_construction_ns",
    "total_time_ns",
    "build_throughput_keys_per_sec",
    "query_throughput_keys_per_sec",
    "search_steps",
    "bytes_exchanged",
    "shard_keys_min",
    "shard_keys_max",
    "status",
    "error",
]

_QUERY_SEED_OFFSET = 0x51  # fresh query sample: distinct stream from the input's


class MemoryGuardError(RuntimeError):
    pass


def _family(args) -> HashFamily:
    kind = HashKind.MURMUR32 if args.hash == "murmur" else HashKind.IDENTITY
    return HashFamily(kind, args.seed)


def _workload_kind(name: str) -> WorkloadKind:
    return WorkloadKind.SEQUENTIAL if name == "seq" else WorkloadKind.RANDOM_WITH_REPLACEMENT


def _check_memory(count: int, hash_range: int, bins_g: int, limit_mb: int) -> None:
    estimate = 56 * count + 16 * hash_range + 8 * bins_g
    if estimate > limit_mb * (1 << 20):
        raise MemoryGuardError(
            f"estimated {estimate / 2**20:.0f} MiB working set exceeds "
            f"--mem-limit-mb {limit_mb}"
        )


def _split_inputs(keys: np.ndarray, shards: int) -> list[np.ndarray]:
    return [np.ascontiguousarray(c) for c in np.array_split(keys, shards)]


def _config(args, hash_range: int = 0) -> ShardConfig:
    return ShardConfig(
        shards=args.shards,
        load_factor=args.load_factor,
        bins_g=args.bins_g,
        family=_family(args),
        hash_range=hash_range or args.hash_range,
    )


def _run_build(args, total_count: int, hash_range_override: int = 0, seed_step: int = 0):
    """Generate the workload, guard memory, build. Returns (table, report, keys)."""
    cfg = _config(args, hash_range_override)
    hr = cfg.hash_range or hash_range_for(total_count, cfg.load_factor)
    bins = cfg.bins_g or max(cfg.shards, round(math.sqrt(hr)))
    _check_memory(total_count, hr, bins, args.mem_limit_mb)

    kind = _workload_kind(args.kind)
    if seed_step:
        # One stream per shard; the per-shard counts stay fixed (weak scaling).
        parts = [
            generate(WorkloadSpec(kind, args.k, total_count // cfg.shards, args.rng_seed + d * seed_step))
            for d in range(cfg.shards)
        ]
        keys = np.concatenate(parts) if parts else np.empty(0, np.uint32)
    else:
        keys = generate(WorkloadSpec(kind, args.k, total_count, args.rng_seed))
        parts = _split_inputs(keys, cfg.shards)
    table, report = build_sharded(parts, cfg)
    return table, report, keys


def _report_row(axis: str, value, report, query_throughput=None, status="ok", error=""):
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(axis=axis, value=value, status=status, error=error)
    if report is not None:
        row.update(
            shards=report.shards,
            total_keys=report.total_keys,
            hash_range=report.hash_range,
            bins_g=report.bins_g,
            time_partition_ns=report.phases["partition"].time_ns,
            time_preprocess_ns=report.phases["preprocess"].time_ns,
            time_all_to_all_ns=report.phases["all_to_all"].time_ns,
            time_table_construction_ns=report.phases["table_construction"].time_ns,
            total_time_ns=report.total_time_ns,
            build_throughput_keys_per_sec=f"{report.build_throughput:.3f}",
            search_steps=report.search_steps,
            bytes_exchanged=report.bytes_exchanged,
            shard_keys_min=min(report.shard_received_counts),
            shard_keys_max=max(report.shard_received_counts),
        )
    if query_throughput is not None:
        row["query_throughput_keys_per_sec"] = f"{query_throughput:.3f}"
    return row


def _write_rows(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def _query_section(result, times, query_count: int) -> dict:
    seconds = times.total_ns / 1e9
    return {
        "query_keys": query_count,
        "total_time_ns": times.total_ns,
        "table_build_time_ns": times.table_build_ns,
        "intersect_time_ns": times.intersect_ns,
        "query_throughput_keys_per_sec": (query_count / seconds) if seconds and query_count else 0.0,
        "matched_positions": result.matched_positions,
        "total_matches": result.total_matches,
        "comparisons": result.comparisons,
        "hash_values": result.hash_values,
    }


def cmd_build(args) -> int:
    if args.snapshot_out and args.shards != 1:
        raise ConfigError("--snapshot-out requires --shards 1 (HGR1 holds one table)")
    table, report, keys = _run_build(args, args.count)
    if args.save_keys:
        save_keys(keys, args.k, args.save_keys)
    if args.snapshot_out:
        save_table(table.shards[0], args.snapshot_out)
    if args.format == "csv":
        _write_rows(args.out, [_report_row("none", "", report)])
    else:
        with open(args.out, "w") as f:
            json.dump(report.to_json_dict(), f, indent=2)
            f.write("\n")
    print(
        f"build: {report.total_keys} keys, {report.shards} shards, "
        f"{report.total_time_ns / 1e6:.2f} ms, "
        f"{report.build_throughput / 1e6:.2f}M keys/s -> {args.out}"
    )
    return 0


def cmd_query(args) -> int:
    if (args.table is None) == (args.input_count is None):
        raise ConfigError("need exactly one table source: --table or --input-count")

    if args.keys_file:
        queries, _ = load_keys(args.keys_file)
    else:
        queries = generate(
            WorkloadSpec(_workload_kind(args.kind), args.k, args.count, args.rng_seed)
        )

    out: dict = {"schema": "query-report-v1"}
    if args.table is not None:
        table = load_table(args.table)
        out["table"] = {
            "source": str(args.table),
            "keys": table.num_keys,
            "hash_range": table.hash_range,
            "family": table.family.kind.name.lower(),
            "seed": table.family.seed,
        }
        result, times = intersect_timed(table, queries)
    else:
        build_args = argparse.Namespace(**vars(args))
        build_args.kind, build_args.k = args.input_kind, args.input_k
        build_args.rng_seed = args.input_rng_seed
        sharded, report, _ = _run_build(build_args, args.input_count)
        out["table"] = report.to_json_dict()
        result, times = query_sharded_timed(sharded, queries)

    out["query"] = _query_section(result, times, len(queries))
    with open(args.out, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")
    split = out["query"]
    print(
        f"query: {len(queries)} keys, {split['matched_positions']} matched, "
        f"{split['query_throughput_keys_per_sec'] / 1e6:.2f}M keys/s -> {args.out}"
    )
    return 0


def _sweep_points(args) -> list:
    parse = float if args.axis == "dup" else int
    try:
        values = [parse(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --values list: {e}") from e
    if not values:
        raise ConfigError("--values is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"--values must be strictly increasing, got {values}")
    if any(v <= 0 for v in values):
        raise ConfigError(f"--values must be positive, got {values}")
    return values


def _sweep_one(args, value):
    """One sweep row. Returns (report, query_throughput or None)."""

    def once():
        if args.axis == "shards":
            row_args = argparse.Namespace(**vars(args))
            row_args.shards = int(value)
            # Weak scaling: --count keys per shard, distinct stream per shard.
            return row_args, _run_build(row_args, int(value) * args.count, seed_step=1)
        if args.axis == "dup":
            hr = max(1, round(args.count / value))
            return args, _run_build(args, args.count, hash_range_override=hr)
        row_args = argparse.Namespace(**vars(args))
        return row_args, _run_build(row_args, int(value))

    runs = [once() for _ in range(args.repeats)]
    runs.sort(key=lambda r: r[1][1].total_time_ns)
    row_args, (table, report, _) = runs[len(runs) // 2]

    query_throughput = None
    if args.with_query:
        qcount = report.total_keys  # query volume mirrors the input volume
        qspec = WorkloadSpec(
            _workload_kind(args.kind), args.k, qcount, args.rng_seed + _QUERY_SEED_OFFSET
        )
        result, times = query_sharded_timed(table, generate(qspec))
        seconds = times.total_ns / 1e9
        query_throughput = (qcount / seconds) if seconds and qcount else 0.0
    return report, query_throughput


def cmd_sweep(args) -> int:
    values = _sweep_points(args)
    rows, failed = [], False
    for value in values:
        try:
            report, query_throughput = _sweep_one(args, value)
            rows.append(_report_row(args.axis, value, report, query_throughput))
        except (MemoryGuardError, ConfigError, OSError) as e:
            failed = True
            rows.append(_report_row(args.axis, value, None, status="error", error=str(e)))
        print(f"sweep {args.axis}={value}: {rows[-1]['status']}")
    _write_rows(args.out, rows)
    print(f"sweep: {len(rows)} rows -> {args.out}")
    return 3 if failed else 0


def _add_workload_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kind", choices=["seq", "rand"], default="rand", help="key distribution")
    p.add_argument("--k", type=int, default=20, help="keys are drawn from {1..2^k}")
    p.add_argument("--count", type=int, default=1 << 16, help="number of keys")
    p.add_argument("--rng-seed", type=int, default=0, help="workload stream seed")


_CONFIG_FILE_KEYS = {"shards", "load_factor", "bins_g", "hash", "seed", "hash_range"}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON file with build configuration")
    p.add_argument("--shards", type=int, default=1, help="worker shard count")
    p.add_argument("--load-factor", type=float, default=1.0, help="keys per hash value")
    p.add_argument("--bins-g", type=int, default=0, help="global bins; 0 = sqrt rule")
    p.add_argument("--hash", choices=["murmur", "identity"], default="murmur")
    p.add_argument("--seed", type=int, default=0, help="hash seed")
    p.add_argument("--hash-range", type=int, default=0, help="global hash range; 0 = auto")
    p.add_argument("--mem-limit-mb", type=int, default=4096, help="working-set guard")


def _apply_config_file(parser, subparsers, argv, args):
    """Re-parse with the config file's values as defaults; flags still win."""
    try:
        with open(args.config) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{args.config}: not valid JSON ({e})") from e
    unknown = set(data) - _CONFIG_FILE_KEYS
    if unknown:
        raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
    if "hash" in data and data["hash"] not in ("murmur", "identity"):
        raise ConfigError(f"{args.config}: hash must be murmur or identity")
    subparsers[args.command].set_defaults(**data)
    return parser.parse_args(argv)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="hashgraph-bench",
        description="Benchmark harness for sharded CSR hash tables.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build a table, write a phase report")
    _add_workload_flags(b)
    _add_config_flags(b)
    b.add_argument("--out", required=True, help="report path")
    b.add_argument("--format", choices=["json", "csv"], default="json")
    b.add_argument("--snapshot-out", default=None, help="write the table (shards=1 only)")
    b.add_argument("--save-keys", default=None, help="also dump the generated keys")
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", help="query a table, write a report")
    _add_workload_flags(q)  # these describe the query key set
    _add_config_flags(q)
    q.add_argument("--table", default=None, help="table snapshot to load")
    q.add_argument("--keys-file", default=None, help="query keys from a key file")
    q.add_argument("--input-kind", choices=["seq", "rand"], default="rand")
    q.add_argument("--input-k", type=int, default=20)
    q.add_argument("--input-count", type=int, default=None, help="build the table inline")
    q.add_argument("--input-rng-seed", type=int, default=0)
    q.add_argument("--out", required=True, help="report path")
    q.set_defaults(func=cmd_query)

    s = sub.add_parser("sweep", help="sweep one axis, write CSV")
    _add_workload_flags(s)
    _add_config_flags(s)
    s.add_argument("--axis", choices=["shards", "dup", "keys"], required=True)
    s.add_argument("--values", required=True, help="strictly increasing, comma separated")
    s.add_argument("--repeats", type=int, default=1, help="runs per point; median kept")
    s.add_argument("--with-query", action="store_true", help="also query each table")
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(func=cmd_sweep)
    return parser, {"build": b, "query": q, "sweep": s}


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.config:
            args = _apply_config_file(parser, subparsers, argv, args)
        if getattr(args, "shards", 1) < 1 or getattr(args, "count", 0) < 0:
            raise ConfigError("invalid --shards or --count")
        return args.func(args)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (SnapshotFormatError, MemoryGuardError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
