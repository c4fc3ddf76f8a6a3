"""Exception types raised by the planner, solvers and simulator."""


class DreamrError(Exception):
    """Base class for all errors raised by this package."""


class ConvergenceError(DreamrError):
    """Infinite-horizon value iteration hit its backup cap before converging."""

    def __init__(self, message: str, residuals: list[float] | None = None):
        super().__init__(message)
        self.residuals = residuals or []


class RouteGenerationError(DreamrError):
    """Rejection sampling could not produce a route satisfying the constraints."""


class PolicyFormatError(DreamrError):
    """A policy file is missing fields, corrupt, or of an unsupported version."""


class PlanningError(DreamrError):
    """The global planner found no path, which the graph construction forbids."""
