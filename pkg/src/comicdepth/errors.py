"""Exception hierarchy shared across the package."""


class ComicDepthError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ComicDepthError):
    """Operands have incompatible spatial extents or channel counts."""


class DomainError(ComicDepthError):
    """A value is outside the mathematical domain of the operation."""


class ParseError(ComicDepthError):
    """A text input could not be parsed.

    Carries the 1-based line number when it is known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateCoordinate(ParseError):
    """Two annotation entries share the same (x, y) pixel."""


class InvalidLabel(ParseError):
    """An annotation rank is not a positive integer."""


class IoError(ComicDepthError):
    """A file could not be read or written in the expected format."""


class NumericalError(ComicDepthError):
    """A computation produced a non-finite value."""


class NoCleanCropError(ComicDepthError):
    """No crop window satisfies the text-area ratio bound."""


class EmptyEvaluation(ComicDepthError):
    """An evaluation was requested over zero points or zero comparable pairs."""


class OutOfBounds(ComicDepthError):
    """An annotated pixel lies outside the prediction it is evaluated against."""


class UnsupportedInput(ComicDepthError):
    """The input lacks information this component requires."""


class ConfigError(ComicDepthError):
    """A configuration value is invalid or inconsistent."""
