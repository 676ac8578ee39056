"""Exception types shared across the package."""


class GuessGuideError(Exception):
    """Base class for package errors."""


class AllocationError(GuessGuideError, ValueError):
    """A timestep grid cannot be made strictly increasing."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegenerateScheduleError(GuessGuideError, ValueError):
    """A schedule point with alpha = sigma = 0, or sigma = 0 where a division by it is needed."""


class UnsupportedSolverError(GuessGuideError, TypeError):
    """The requested solver needs a linear operator."""


class DivergenceError(GuessGuideError, FloatingPointError):
    """An iterative solver produced non-finite values or blew up."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InapplicableError(GuessGuideError, ValueError):
    """A theoretical check was requested outside its hypotheses (e.g. q >= 1)."""


class ConfigError(GuessGuideError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
