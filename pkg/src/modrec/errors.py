"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/format
errors exit 2, numeric failures exit 3.
"""


class ModrecError(Exception):
    """Base class for all package errors."""


class ShapeError(ModrecError):
    """Tensor or layer shape contract violated."""


class ConfigError(ModrecError):
    """Invalid configuration field; message names the field."""


class DataError(ModrecError):
    """Bad labels or malformed input data."""


class FormatError(DataError):
    """On-disk container violates its documented layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File format version is not supported."""


class CountError(FormatError):
    """Record count disagrees with the header."""


class TruncatedError(FormatError):
    """File ends in the middle of a record or header."""


class NumericError(ModrecError):
    """Non-finite loss or gradient encountered."""
