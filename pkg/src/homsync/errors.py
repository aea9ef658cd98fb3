"""Exception hierarchy shared by the library and the command-line front end."""


class HomSyncError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(HomSyncError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""

    exit_code = 2


class ConfigError(HomSyncError, ValueError):
    exit_code = 2


class FitError(HomSyncError, RuntimeError):
    """The weighted dip fit did not converge.

    ``last_params`` holds the final iterate so callers can log it.
    """

    exit_code = 3

    def __init__(self, message, last_params=None, stage=None):
        super().__init__(message)
        self.last_params = last_params
        self.stage = stage


class NoDipError(FitError):
    """The scan carries no resolvable dip (flat, degenerate or too short)."""


class InsufficientDataError(HomSyncError, RuntimeError):
    exit_code = 4
