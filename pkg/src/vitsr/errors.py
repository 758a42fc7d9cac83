"""Exception taxonomy shared across the package.

Each class maps onto one CLI exit code family: validation/data problems
exit 2, missing prerequisites exit 3, bad configuration exits 4.
"""


class VitsrError(Exception):
    """Base class for package errors."""


class DimensionError(VitsrError, ValueError):
    """Array extents or ranks incompatible with the requested operation."""


class ValidationError(VitsrError, ValueError):
    """Input values violate a documented precondition."""


class DataError(VitsrError, ValueError):
    """Dataset content is unusable (empty, NaN, degenerate reference)."""


class MissingPathError(DataError):
    """Dataset or input path does not exist."""


class LayoutMismatchError(DataError):
    """Raw volume byte size disagrees with its layout descriptor."""


class UnreadableFileError(DataError):
    """File exists but cannot be decoded."""


class SamplingError(VitsrError, ValueError):
    """Degenerate sample draw, e.g. an image paired with itself."""


class ConfigurationError(VitsrError, ValueError):
    """Configuration value outside the supported set."""


class DependencyError(VitsrError, RuntimeError):
    """Required earlier-phase artifact (checkpoint) is missing."""


class UsageError(VitsrError, RuntimeError):
    """API misuse, e.g. backward on a non-scalar or a spent graph."""
