"""Exception types shared across the package."""


class DarcyOpError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DarcyOpError, ValueError):
    pass


class InvalidData(DarcyOpError, ValueError):
    pass


class NumericalError(DarcyOpError, ArithmeticError):
    """Raised when a factorization or iterative solve fails.

    ``residual`` carries the last residual norm when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CorruptData(DarcyOpError, IOError):
    pass


class UnsupportedVersion(DarcyOpError, IOError):
    pass


class UndefinedMetric(DarcyOpError, ValueError):
    pass


class TrainingDiverged(DarcyOpError, FloatingPointError):
    pass
