"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than bare ValueError.
"""


class HypalignError(Exception):
    """Base class for all package errors."""


class DimensionError(HypalignError):
    """Array shapes or dimensions incompatible with the requested operation."""


class ManifoldError(HypalignError):
    """Input violates a manifold constraint (off-manifold point, bad curvature)."""


class NumericError(HypalignError):
    """A computation produced non-finite values."""


class ConfigError(HypalignError):
    """Invalid or unknown configuration keys/values."""


class DataError(HypalignError):
    """Malformed dataset, split, or checkpoint input."""
