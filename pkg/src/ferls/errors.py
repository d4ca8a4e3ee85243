"""Exception types raised across the package."""
import numpy as np


class FerlsError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(FerlsError, ValueError):
    pass


class InvalidConfig(FerlsError, ValueError):
    pass


class NotPositiveDefinite(FerlsError, np.linalg.LinAlgError):
    """A Cholesky pivot was not strictly positive; regularize the system."""


class SingularInnovation(FerlsError, np.linalg.LinAlgError):
    """The RLS innovation covariance could not be factorized."""


class NonFiniteState(FerlsError, FloatingPointError):
    def __init__(self, msg="non-finite state", step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class NonFiniteGradient(FerlsError, FloatingPointError):
    pass


class InsufficientData(FerlsError, ValueError):
    pass


class AllInfiniteCosts(FerlsError, ValueError):
    pass


class ParseError(FerlsError, ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line
