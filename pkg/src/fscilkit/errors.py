"""Exception hierarchy for the toolkit.

Every error raised by fscilkit derives from :class:`FscilError`, so callers
(and the CLI) can catch one type and map it to a nonzero exit code.
"""


class FscilError(Exception):
    """Base class for all toolkit errors."""


class ZeroVectorError(FscilError):
    """A vector with zero Euclidean norm reached an operation that cannot
    classify or normalize it.  Zero features signal an upstream defect and
    are never silently mapped to a zero similarity."""


class DimensionMismatchError(FscilError):
    """Two vectors (or a vector and a bank) disagree on dimensionality."""


class FormatError(FscilError):
    """A dataset or snapshot file is malformed (magic, version, layout)."""


class LabelGapError(FscilError):
    """Class ids in a dataset are not the contiguous range 0..C-1."""


class InfeasibleProtocolError(FscilError):
    """The session protocol asks for more classes than the dataset has."""


class InsufficientShotsError(FscilError):
    """An incremental class has fewer train samples than the shot count."""


class EmptyClassError(FscilError):
    """A prototype was requested for a class with no samples."""


class DuplicateClassError(FscilError):
    """A classifier bank was extended with a class id it already holds."""


class EmptySampleSetError(FscilError):
    """A mixture fit was requested on an empty sample set."""


class EmptyBankError(FscilError):
    """Classification was requested against a bank with no classes."""


class BankMismatchError(FscilError):
    """The two banks of a dual-feature classification cover different
    class sets."""


class EmptyResultError(FscilError):
    """Metrics were requested for a session with no prediction records."""


class MissingSessionError(FscilError):
    """Aggregation requires a contiguous run of sessions 0..T."""


class EmptySelectionError(FscilError):
    """A dataset filter selected no records."""


class UnknownClassError(FscilError):
    """An update referenced a class id absent from the bank."""


class ConfigError(FscilError):
    """A configuration value is invalid or inconsistent."""


class LambdaOutOfRangeError(FscilError):
    """A fusion coefficient falls outside the configured range."""


class SelfFusionError(FscilError):
    """Inter-class fusion was attempted between samples of one class."""
