"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not conform to its declared on-disk format."""


class NumericalError(ValueError):
    """A computation produced non-finite values where finite ones are required."""


class GuidanceError(RuntimeError):
    """A guidance backend is unreachable or violated the wire protocol."""
