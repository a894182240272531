"""Exception hierarchy shared by all gazeinfer modules.

The CLI maps these onto exit codes: usage problems exit 1, any
GazeinferError raised while processing data exits 2.
"""


class GazeinferError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(GazeinferError):
    """Tensor extents are incompatible with an operation's contract."""


class FormatError(GazeinferError):
    """A binary or text artifact does not conform to its documented format."""


class TruncatedFileError(FormatError):
    """A file ended before the bytes its header promised."""


class ManifestError(GazeinferError):
    """A dataset manifest line failed validation.

    Carries the 1-based line number so callers can point at the offending
    record.
    """

    def __init__(self, line_number, message):
        super().__init__(f"manifest line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(GazeinferError):
    """A configuration value is out of its allowed range."""
