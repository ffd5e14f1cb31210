"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Input has the wrong shape, dimensionality or an out-of-range parameter."""


class ParseError(ValueError):
    """A binary file could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(ParseError):
    """The file is well formed but uses an encoding we do not read."""
