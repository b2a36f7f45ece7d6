"""Exception types shared across the package.

Every error raised by the library is a subclass of SparseSecAggError, so
callers can catch one type at the top level.  The CLI maps ConfigError to
exit code 2 and everything else to exit code 1.
"""

from __future__ import annotations


class SparseSecAggError(Exception):
    """Base class for all library errors."""


class ConfigError(SparseSecAggError):
    """A configuration value is invalid.  Carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MagnitudeOverflow(SparseSecAggError):
    """A signed value is too large to embed unambiguously into the field."""


class OverflowBudgetViolation(SparseSecAggError):
    """The aggregate could wrap around the field and decode incorrectly."""


class StreamExhausted(SparseSecAggError):
    """Rejection sampling failed repeatedly; the byte source is broken."""


class InvalidGroupElement(SparseSecAggError):
    """A received public value is not a member of the expected subgroup."""


class DegreeTooLarge(SparseSecAggError):
    """Requested sharing polynomial degree does not admit reconstruction."""


class InsufficientShares(SparseSecAggError):
    """Fewer shares than the reconstruction threshold were supplied."""


class InconsistentShares(SparseSecAggError):
    """Two qualifying subsets of shares disagree about the secret."""


class TooManyDropouts(SparseSecAggError):
    """The surviving cohort is at or below half; unmasking is impossible."""


class DuplicateUser(SparseSecAggError):
    """Two messages in one round claim the same sender."""
