"""Exception hierarchy shared across the toolkit.

Every error raised by uuaudit derives from :class:`UUAuditError`, so callers
can catch one base class at CLI/service boundaries while tests can assert on
the precise failure mode.
"""

from __future__ import annotations


class UUAuditError(Exception):
    """Base class for all uuaudit errors."""


class SchemaError(UUAuditError):
    """Input file header/structure does not match the documented schema."""


class ValidationError(UUAuditError):
    """A row or value violates a declared invariant (bounds, uniqueness)."""


class DimensionError(UUAuditError):
    """Vector/matrix shapes are inconsistent or out of range."""


class SizeError(UUAuditError):
    """A requested count exceeds what the data can supply."""


class ConsistencyError(UUAuditError):
    """A SearchState or trace references ids unknown to its TestSet."""


class ReuseError(UUAuditError):
    """A point id was offered as a candidate or queried more than once."""


class FitUnavailableError(UUAuditError):
    """Estimator preconditions unmet; caller should fall back to the prior."""


class OracleError(UUAuditError):
    """Oracle construction or querying failed."""


class ConfigError(UUAuditError):
    """A search or experiment configuration is invalid."""


class InsufficientDataError(UUAuditError):
    """Too few points to run the requested estimator or smoother."""


class SdrUndefinedError(UUAuditError):
    """SDR denominator is zero (all queried confidences exactly 1)."""
