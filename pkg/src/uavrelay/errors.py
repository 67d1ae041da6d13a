"""Exception types shared across the package.

Every error carries a short ``kind`` used by the CLI to emit
machine-parsable one-liners (``error: <kind>: <detail>``).
"""

from __future__ import annotations


class UavRelayError(Exception):
    kind = "error"


class ConfigError(UavRelayError):
    """Invalid configuration values or inconsistent dimensions in a config."""

    kind = "config"


class DomainError(UavRelayError):
    """Arguments outside an operation's domain (out of extent, bad index, ...)."""

    kind = "domain"


class FormatError(UavRelayError):
    """Corrupt or mismatched binary file content."""

    kind = "format"


class StateError(UavRelayError):
    """Operation applied to an object in the wrong state (e.g. stepping a finished episode)."""

    kind = "state"


class DimensionError(UavRelayError):
    """Shape or dimension mismatch between artifacts."""

    kind = "dimension"
