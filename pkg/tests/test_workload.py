"""Workload generation: determinism, range, uniformity, key-file round trips."""

import numpy as np
import pytest
from scipy import stats

from hashgraph import (
    ConfigError,
    SnapshotFormatError,
    WorkloadKind,
    WorkloadSpec,
    duplicate_rate,
    generate,
    load_keys,
    save_keys,
    splitmix64_at,
)

SEQ = WorkloadKind.SEQUENTIAL
RAND = WorkloadKind.RANDOM_WITH_REPLACEMENT

# First outputs of the stream, frozen from an independent transcription of
# the canonical sequential splitmix64 before this module was written.
SPLITMIX_GOLDEN_SEED0 = [
    16294208416658607535,
    7960286522194355700,
    487617019471545679,
    17909611376780542444,
]
SPLITMIX_GOLDEN_SEED1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


def test_splitmix_golden_vectors():
    got0 = splitmix64_at(0, np.arange(4, dtype=np.uint64))
    assert [int(v) for v in got0] == SPLITMIX_GOLDEN_SEED0
    got1 = splitmix64_at(1234567, np.arange(5, dtype=np.uint64))
    assert [int(v) for v in got1] == SPLITMIX_GOLDEN_SEED1234567


def test_sequential_example():
    keys = generate(WorkloadSpec(SEQ, k=3, count=8))
    assert keys.tolist() == [1, 2, 3, 4, 5, 6, 7, 8]


def test_zero_count():
    assert len(generate(WorkloadSpec(SEQ, k=3, count=0))) == 0
    assert len(generate(WorkloadSpec(RAND, k=3, count=0))) == 0


def test_sequential_rejects_domain_overflow():
    with pytest.raises(ConfigError):
        generate(WorkloadSpec(SEQ, k=3, count=9))


def test_random_is_deterministic():
    spec = WorkloadSpec(RAND, k=20, count=1 << 20, rng_seed=12345)
    a = generate(spec)
    b = generate(spec)
    assert np.array_equal(a, b)
    different = generate(WorkloadSpec(RAND, k=20, count=1 << 20, rng_seed=12346))
    assert not np.array_equal(a, different)


@pytest.mark.parametrize("k", [1, 8, 20, 31])
def test_random_range(k):
    keys = generate(WorkloadSpec(RAND, k=k, count=20_000, rng_seed=7))
    assert keys.min() >= 1
    assert int(keys.max()) <= 1 << k


def test_k32_covers_full_word():
    keys = generate(WorkloadSpec(RAND, k=32, count=50_000, rng_seed=7))
    assert keys.dtype == np.uint32
    assert int(keys.max()) > 1 << 31  # top half of the space is reachable


def test_random_uniformity_chi_squared():
    keys = generate(WorkloadSpec(RAND, k=20, count=1 << 20, rng_seed=99))
    cells = 1 << 10
    counts = np.bincount((keys - 1) >> np.uint32(10), minlength=cells)
    expected = (1 << 20) / cells
    statistic = float(((counts - expected) ** 2 / expected).sum())
    assert statistic < stats.chi2.ppf(0.999, df=cells - 1)


def test_duplicate_rate_values():
    assert duplicate_rate(1 << 20, 1 << 20) == 1.0
    assert duplicate_rate(1 << 20, 1 << 17) == 8.0
    assert duplicate_rate(0, 1) == 0.0
    with pytest.raises(ConfigError):
        duplicate_rate(1, 0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        WorkloadSpec(SEQ, k=0, count=1)
    with pytest.raises(ConfigError):
        WorkloadSpec(SEQ, k=33, count=1)
    with pytest.raises(ConfigError):
        WorkloadSpec(SEQ, k=3, count=-1)
    with pytest.raises(ConfigError):
        WorkloadSpec(SEQ, k=3, count=1, table_range_override=0)


def test_key_file_round_trip(tmp_path):
    keys = generate(WorkloadSpec(RAND, k=16, count=5000, rng_seed=3))
    path = tmp_path / "keys.bin"
    save_keys(keys, 16, path)
    assert path.stat().st_size == 16 + 4 * 5000
    loaded, k = load_keys(path)
    assert k == 16
    assert np.array_equal(loaded, keys)


def test_key_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 12)
    with pytest.raises(SnapshotFormatError):
        load_keys(path)


def test_key_file_rejects_truncation(tmp_path):
    keys = generate(WorkloadSpec(SEQ, k=8, count=100))
    path = tmp_path / "keys.bin"
    save_keys(keys, 8, path)
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(SnapshotFormatError):
        load_keys(path)
