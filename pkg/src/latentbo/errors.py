"""Exception types raised across the package."""


class LatentBoError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(LatentBoError):
    """A generator or config spec violates its preconditions."""


class DegenerateRangeError(LatentBoError):
    """A rescale was requested on data with zero global range."""


class ShapeError(LatentBoError):
    """Array dimensions do not match what an operation requires."""


class TrainingDivergedError(LatentBoError):
    """Training produced a non-finite loss.

    Carries the epoch index at which divergence was detected.
    """

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class NotPositiveDefiniteError(LatentBoError):
    """Kernel matrix stayed indefinite after nugget escalation."""


class FitFailedError(LatentBoError):
    """Every hyperparameter restart diverged or failed."""


class DegenerateDataError(LatentBoError):
    """Training targets have zero variance and cannot be standardized."""


class SearchExhaustedError(LatentBoError):
    """No feasible, unevaluated candidate cells remain."""


class InfeasibleSpaceError(LatentBoError):
    """No grid cell decodes to a feasible trajectory."""


class InsufficientSpaceError(LatentBoError):
    """Fewer feasible cells than requested initial samples."""


class InsufficientCellsError(LatentBoError):
    """A manifold grid has too few cells for pair sampling."""


class EvaluationFailedError(LatentBoError):
    """An objective evaluation failed; carries diagnostics."""
