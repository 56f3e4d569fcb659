"""Error types shared across the package.

Every error carries a short machine-readable ``category`` so the CLI can
print one parseable line per failure.
"""
from __future__ import annotations


class TrajmodeError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ParseError(TrajmodeError):
    """Malformed input text (PLT files, labels files, dataset lines)."""

    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(TrajmodeError):
    """Structurally valid input that violates a data contract."""

    category = "data"


class ConfigError(TrajmodeError):
    """Bad or inconsistent configuration."""

    category = "config"


class CheckpointError(TrajmodeError):
    """Unreadable, truncated or incompatible model checkpoint."""

    category = "checkpoint"
