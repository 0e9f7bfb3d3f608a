"""Exception hierarchy.

Each family maps to one CLI exit code (see ``dkshom.cli``).
"""


class DksHomError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DksHomError):
    exit_code = 2


class TraceIOError(DksHomError):
    exit_code = 3


class FitError(DksHomError):
    exit_code = 4


class NonConvergenceError(FitError):
    pass


class DegenerateWindowError(FitError):
    pass


class InsufficientSpanError(FitError):
    pass


class AssignmentError(FitError):
    """Mode-number assignment failed during the dispersion fit."""


class InfeasibleError(DksHomError):
    exit_code = 5

    def __init__(self, message, binding=()):
        super().__init__(message)
        self.binding = tuple(binding)


class DomainError(DksHomError, ValueError):
    """Input outside the physical domain of a formula."""


class NoSolutionError(DomainError):
    pass


class AmbiguityError(DomainError):
    pass
