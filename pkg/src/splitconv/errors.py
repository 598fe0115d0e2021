"""Exception hierarchy shared by every module of the package."""


class SplitConvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SplitConvError, ValueError):
    """Tensor shapes disagree along a named axis."""


class GeometryError(SplitConvError, ValueError):
    """Stride/padding/kernel produce an empty or invalid output."""


class PartitionError(SplitConvError, ValueError):
    """A channel split point lies outside the open interval (0, c)."""


class NumericError(SplitConvError, ArithmeticError):
    """Non-finite values reached an operation that requires finite input."""


class ConfigError(SplitConvError, ValueError):
    """Operator or training hyper-parameters are inconsistent."""


class VariantError(SplitConvError, RuntimeError):
    """An operation was requested that the configured variant does not have."""


class StateError(SplitConvError, RuntimeError):
    """Saved forward state does not belong to the config used for backward."""


class PropagationError(SplitConvError, ValueError):
    """Shape propagation through an architecture failed at a named layer."""


class FormatError(SplitConvError, ValueError):
    """A data file does not have the expected binary layout."""


class CorruptionError(FormatError):
    """A data file has the right layout but holds impossible values."""


class MissingDataError(SplitConvError, FileNotFoundError):
    """Expected data files are absent."""


class DivergenceError(SplitConvError, FloatingPointError):
    """Training produced a non-finite loss."""
