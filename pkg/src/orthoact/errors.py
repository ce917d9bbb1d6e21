"""Exception types raised across the package."""


class OrthoactError(Exception):
    """Base class for all package errors."""


class UnsupportedFamily(OrthoactError, ValueError):
    """The requested operation has no implementation for this activation family."""


class DegenerateActivation(OrthoactError, ArithmeticError):
    """A second moment vanished, so the corresponding gain is infinite."""


class RankDeficient(OrthoactError, ArithmeticError):
    """Least-squares design matrix is numerically singular."""


class NonConvergent(OrthoactError, RuntimeError):
    """An iterative solver hit its iteration cap or produced non-finite values."""


class NonFiniteLoss(OrthoactError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class ConditioningFailure(OrthoactError, ArithmeticError):
    """Interpolation nodes are too clustered for a reliable polynomial fit."""
