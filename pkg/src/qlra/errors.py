"""Exception types raised across the package."""

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not conform."""


class ParameterError(ValueError):
    """A numeric parameter is outside its admissible range."""


class PreconditionError(ValueError):
    """An input violates a documented precondition."""


class SingularMatrixError(np.linalg.LinAlgError):
    """The complex representation of a coefficient matrix is numerically singular.

    ``condition_estimate`` carries the estimated condition number of the
    complex system that was rejected.
    """

    def __init__(self, message, condition_estimate=np.inf):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class RankDeficientError(np.linalg.LinAlgError):
    """A matrix expected to have full column rank does not, numerically."""


class FormatError(ValueError):
    """A binary file does not follow the expected layout."""
