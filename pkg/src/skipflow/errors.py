"""Exception hierarchy shared by every module."""


class SkipFlowError(Exception):
    """Base class for all package errors."""


class DimensionError(SkipFlowError, ValueError):
    """Array shapes do not conform."""


class ConfigurationError(SkipFlowError, ValueError):
    """A model, training or data configuration is invalid."""


class DataValidationError(SkipFlowError, ValueError):
    """Input data violates its declared format or ranges."""


class NumericalError(SkipFlowError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
