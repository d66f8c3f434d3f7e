"""Exception hierarchy shared by all simulator modules."""


class BubbleSimError(Exception):
    """Base class for simulator failures."""


class DomainError(BubbleSimError, ValueError):
    """An argument lies outside the domain of a formula."""


class DegenerateIndicatorError(BubbleSimError):
    """A color function carries no mass, so ball moments are undefined."""


class CollapseError(BubbleSimError):
    """The bubble radius reached zero or below."""


class RadiusGuardError(BubbleSimError):
    """The bubble radius fell below half its initial value.

    The partial trajectory up to the offending step is attached so callers
    can inspect what happened before the abort.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class SolverError(BubbleSimError):
    """A linear solve failed or produced an unacceptable residual."""
