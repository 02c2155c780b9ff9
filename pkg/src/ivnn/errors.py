"""Exception hierarchy."""


class IvnnError(Exception):
    """Base class for all package errors."""


class InvalidSignal(IvnnError, ValueError):
    pass


class InfeasibleProfile(IvnnError, ValueError):
    pass


class IndexOutOfRange(IvnnError, IndexError):
    pass


class PoleAtDc(IvnnError, ZeroDivisionError):
    pass


class AlgebraicLoop(IvnnError, ValueError):
    pass


class DimensionMismatch(IvnnError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class NoConvergence(IvnnError, RuntimeError):
    """The implicit plant equation could not be solved to tolerance."""


class NotConverged(IvnnError, RuntimeError):
    """An optimizer hit its iteration cap. ``report`` holds the partial result."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LinearSolveFailure(IvnnError, RuntimeError):
    pass


class SingularNormalMatrix(IvnnError, ArithmeticError):
    pass


class SingularCrossMatrix(IvnnError, ArithmeticError):
    pass


class EmptyResults(IvnnError, ValueError):
    pass


class ConfigError(IvnnError, ValueError):
    pass
