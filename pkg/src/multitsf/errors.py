"""Exception types shared across the package."""


class MultiTSFError(Exception):
    """Base class for every error raised by multitsf."""


class InvalidArgumentError(MultiTSFError, ValueError):
    pass


class FormatError(MultiTSFError, ValueError):
    """On-disk data does not match the expected layout."""


class StorageError(MultiTSFError, OSError):
    pass


class GenerationError(MultiTSFError, RuntimeError):
    pass


class NumericError(MultiTSFError, ArithmeticError):
    """A loss or gradient became non-finite."""


class UndefinedMetricError(MultiTSFError, ValueError):
    """A ranking metric was requested with no positive labels to rank."""
