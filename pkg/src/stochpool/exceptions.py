"""
Error hierarchy for stochpool.

Every error raised on purpose by the package derives from StochPoolError.
The CLI maps the exit_code of an uncaught error to the process exit status.
"""


class StochPoolError(Exception):
    """Base class for all stochpool errors."""

    exit_code = 1


class DimensionError(StochPoolError, ValueError):
    """Tensor shapes do not compose."""


class ContractViolationError(StochPoolError, ValueError):
    """An input breaks an operation's precondition (e.g. negative activations)."""


class ConsistencyError(StochPoolError):
    """Internal bookkeeping disagrees with itself (stale trace, bad switch)."""


class ConfigError(StochPoolError):
    """Experiment configuration is malformed."""

    exit_code = 1


class DataFormatError(StochPoolError):
    """A dataset file is truncated, mislabeled or has a bad magic number."""

    exit_code = 2


class NumericalError(StochPoolError, ArithmeticError):
    """NaN or Inf reached a loss, gradient or parameter."""

    exit_code = 3
