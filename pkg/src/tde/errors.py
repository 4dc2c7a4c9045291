"""Exception hierarchy shared by every tde module."""


class TdeError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(TdeError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(TdeError, ArithmeticError):
    """A computation produced NaN or Inf."""


class SchemaError(TdeError, ValueError):
    pass


class DataError(TdeError, ValueError):
    pass


class StateError(TdeError, RuntimeError):
    """An object was used before it was fitted or initialised."""


class ConfigError(TdeError, ValueError):
    pass


class MetricError(TdeError, ValueError):
    pass


class ContractError(TdeError, ValueError):
    """A documented precondition of an operation was violated."""
