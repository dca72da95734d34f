"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit status 1 and
:class:`ImageIOError` (and other ``OSError``) to exit status 2.
"""


class RelightError(Exception):
    """Base class for all errors raised by relightaug."""


class ValidationError(RelightError, ValueError):
    """Input data violates a documented invariant."""


class DimensionMismatchError(ValidationError):
    pass


class DegenerateEnvironmentError(ValidationError):
    """Environment map has zero total sampling weight."""


class ImageIOError(RelightError, OSError):
    """Base class for file-format errors. Always carries the offending path."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class MissingFileError(ImageIOError, FileNotFoundError):
    pass


class MalformedFileError(ImageIOError):
    pass


class UnsupportedFormatError(ImageIOError):
    pass


class TruncatedFileError(MalformedFileError):
    pass


class BadMagicError(MalformedFileError):
    pass


class ZeroScaleError(MalformedFileError):
    pass
