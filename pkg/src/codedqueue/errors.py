"""Exception hierarchy shared by all modules."""


class CodedQueueError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(CodedQueueError, ValueError):
    """A physical or probabilistic parameter is outside its domain."""


class ConfigurationError(CodedQueueError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class UnsupportedOperationError(CodedQueueError):
    """The operation is not defined for this kind of model."""


class NumericalError(CodedQueueError, ArithmeticError):
    """A numerical routine failed (singular system, quadrature, ...)."""


class SolverError(NumericalError):
    """An iterative solver did not converge or produced an invalid result."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PrecisionError(NumericalError):
    """A result was requested beyond the precision of a computed quantity."""


class InstabilityError(CodedQueueError):
    """The queue is not positive recurrent for these parameters."""
