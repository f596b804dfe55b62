"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in :mod:`eventlens.cli`: schema problems
exit 2, numeric failures exit 3.
"""


class EventLensError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(EventLensError):
    """An operation was called with arguments outside its contract."""


class SchemaError(EventLensError):
    """Malformed input data or configuration (CSV rows, config keys, ...)."""


class OrderingError(SchemaError):
    """Timestamps arrived out of order."""


class DegenerateRangeError(SchemaError):
    """A value range collapsed to a point where an interval is required."""


class ConfigurationError(EventLensError):
    """A structurally valid configuration that cannot be run."""


class NumericError(EventLensError):
    """A numeric routine failed to produce a usable result."""


class UndefinedMetricError(ConfigurationError):
    """A requested metric is undefined for the given inputs."""
