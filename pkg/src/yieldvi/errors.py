"""Exception types raised by the solvers."""


class YieldVIError(Exception):
    """Base class for all package errors."""


class GridError(YieldVIError, ValueError):
    """Invalid grid construction or mismatched fields."""


class SolverError(YieldVIError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class NewtonNonconvergence(SolverError):
    """Newton iteration hit its cap without meeting the residual tolerance.

    ``gamma`` records the regularization level at which it failed, when known.
    """

    def __init__(self, message, gamma=None, residual=None):
        super().__init__(message)
        self.gamma = gamma
        self.residual = residual


class CycleDetected(SolverError):
    """Primal-dual active-set iteration revisited an earlier guess."""

    def __init__(self, message, iterates=()):
        super().__init__(message)
        self.iterates = tuple(iterates)


class LineSearchFailure(SolverError):
    """Armijo backtracking shrank the step below its floor."""
