"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """An argument violates a documented precondition."""


class EmptyNeighborhoodError(ValueError):
    """A radius-based neighborhood query returned no training points."""


class SolverFailureError(RuntimeError):
    """The TV solver did not certify optimality within its budget.

    Carries the best iterate found so the caller can inspect it.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class DataFormatError(ValueError):
    """An input file could not be parsed; message names the offending location."""
