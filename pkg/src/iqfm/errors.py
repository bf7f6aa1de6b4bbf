"""Exception types raised across the package."""


class IqfmError(Exception):
    """Base class for every error raised by this package."""


class SizeError(IqfmError, ValueError):
    pass


class ArgumentError(IqfmError, ValueError):
    pass


class DimensionError(IqfmError, ValueError):
    pass


class GateIndexError(IqfmError, IndexError):
    pass


class FormatError(IqfmError, ValueError):
    pass


class LabelingError(IqfmError, ValueError):
    pass


class GenerationError(IqfmError, RuntimeError):
    pass


class ConfigError(IqfmError, ValueError):
    pass


class NumericError(IqfmError, ArithmeticError):
    pass


class PairingError(IqfmError, ValueError):
    pass


class SimilarityError(IqfmError, ValueError):
    """Cosine similarity requested for a zero vector."""
