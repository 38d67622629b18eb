"""Exception hierarchy shared across the package."""


class AcirError(Exception):
    """Base class for all errors raised by this package."""


class LengthMismatchError(AcirError):
    """Two vectors that must have equal length do not."""


class ZeroVarianceError(AcirError):
    """Pearson correlation requested for a constant vector."""


class EmptyClassError(AcirError):
    """A class referenced by labels has no members."""


class DivergedError(AcirError):
    """Optimisation produced a non-finite loss."""


class BadRangeError(AcirError):
    """Pixel values outside the expected [0, 1] range."""


class ShapeError(AcirError):
    """Array shape violates an operation's contract."""


class BitWidthMismatchError(AcirError):
    """Binary codes with different bit counts were combined."""


class TooSmallError(AcirError):
    """Image too small for the requested multi-scale pyramid."""


class InsufficientDataError(AcirError):
    """Not enough samples to calibrate a threshold."""


class FormatError(AcirError):
    """A file does not match its expected on-disk format."""


class FormatVersionMismatchError(FormatError):
    """File carries an unsupported format version."""


class ChecksumMismatchError(FormatError):
    """File checksum does not match its contents (corrupt or truncated)."""


class LabelMismatchError(AcirError):
    """An ingested image has no matching label row."""


class ConfigError(AcirError):
    """Pipeline configuration failed validation."""
