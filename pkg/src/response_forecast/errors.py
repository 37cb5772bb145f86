"""Exception hierarchy shared by all modules."""


class ResponseForecastError(Exception):
    """Base class for all package errors."""


class ConfigError(ResponseForecastError, ValueError):
    """Invalid configuration or inconsistent inputs."""


class NumericDomainError(ResponseForecastError, ArithmeticError):
    """A numeric quantity left its admissible domain."""


class DivergenceError(NumericDomainError):
    """A simulated trajectory escaped the divergence guard."""


class ReversibilityError(ResponseForecastError, ValueError):
    """Detailed balance does not hold for a generator."""


class PreconditionError(ResponseForecastError, ValueError):
    """An operation was called outside its precondition."""


class InsufficientDataError(ResponseForecastError, ValueError):
    """Too few samples for a statistical estimate."""


class LagGridError(ResponseForecastError, ValueError):
    """A lag is not an integer multiple of the sampling step."""


class DomainTooSmallError(ResponseForecastError, ValueError):
    """A truncated grid domain leaves too much equilibrium mass outside."""


class StepSizeError(NumericDomainError):
    """Finite-difference estimates at two step sizes disagree."""


class ToleranceFailure(NumericDomainError):
    """A verification check exceeded its tolerance."""
