"""Exception types raised by mfpcakit.

Everything derives from ValueError so callers that do not care about the
distinction can catch a single base class; the CLI maps all of these to
exit code 2.
"""


class DataFormatError(ValueError):
    """Malformed input file or table (wrong columns, bad cell, bad schema)."""


class DuplicateRecordError(DataFormatError):
    """A (subject, occasion, curve) triple appears more than once."""


class GridError(ValueError):
    """Grid/vector dimension mismatch or point outside the grid domain."""


class ConfigError(ValueError):
    """Invalid option or parameter value."""


class RankDeficiencyError(ValueError):
    """Singular normal equations or constant regressor."""


class InsufficientDataError(ValueError):
    """Too few curves, subjects or observations for the requested operation."""


class LandmarkNotFoundError(ValueError):
    """No acceptable peak inside a landmark search window."""


class InvalidLandmarksError(ValueError):
    """Landmark anchor sequence is not strictly increasing."""


class WithinLevelUnidentifiableError(ValueError):
    """Every subject has a single curve; curve-level covariance cannot be separated."""


class SymmetryError(ValueError):
    """Matrix expected to be symmetric is not, beyond tolerance."""


class ModelFormatError(ValueError):
    """Problem reading or writing a serialized reference model."""


class ModelVersionError(ModelFormatError):
    """Serialized model carries an unsupported format version."""


class CorruptModelError(ModelFormatError):
    """Serialized model violates the model invariants or schema."""


class IncompleteDesignError(ValueError):
    """Missing cells in a subjects-by-occasions measurement matrix."""


class UndefinedStatisticError(ValueError):
    """Statistic is undefined on the given data (e.g. zero variance)."""


class CovarianceError(ValueError):
    """Score covariance is not positive semi-definite even after jitter."""


class OrthonormalizationError(ValueError):
    """Seed functions are linearly dependent; cannot orthonormalize."""


class JoinError(ValueError):
    """Subjects present in curve data are missing from a companion table."""
