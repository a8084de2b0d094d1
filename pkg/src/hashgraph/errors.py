"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad load factor, shard count, hash range, etc."""


class SnapshotFormatError(RuntimeError):
    """A table or key-file snapshot is malformed (bad magic, truncated body)."""
