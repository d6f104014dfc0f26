"""Exception types shared across the package."""


class LrttError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(LrttError, ValueError):
    pass


class SplitOutOfRange(LrttError, ValueError):
    pass


class IndexOutOfRange(LrttError, IndexError):
    pass


class NumericalFailure(LrttError, ArithmeticError):
    """An SVD/QR backend failed or produced non-finite values."""


class ConfigError(LrttError, ValueError):
    pass


class LabelMismatch(LrttError, ValueError):
    pass


class ContainerError(LrttError, IOError):
    """Raised for unreadable or corrupt serialized containers."""
