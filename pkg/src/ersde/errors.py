"""Exception types shared across the package."""


class ErsdeError(Exception):
    """Base class for all errors raised by ``ersde``."""


class ParameterError(ErsdeError, ValueError):
    """An argument is out of range or inconsistent with another argument."""


class SolverError(ErsdeError, ArithmeticError):
    """A numerical failure while stepping a sampler.

    ``step`` is the 1-based step index when the failure happened inside
    :func:`ersde.solvers.sample`, else ``None``.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class AdmissibilityError(SolverError):
    """The noise-scale function violates phi(x_t)/phi(x_s) <= x_t/x_s."""

    def __init__(self, message: str, pair: tuple[float, float] | None = None,
                 step: int | None = None):
        super().__init__(message, step)
        self.pair = pair


class DividedDifferenceError(SolverError):
    """Two buffered nodes share a noise level, so a divided difference is undefined."""
