"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class UpconvError(Exception):
    exit_code = 3


class DomainError(UpconvError, ValueError):
    exit_code = 2


class ConfigurationError(UpconvError, ValueError):
    exit_code = 2


class NoRootError(UpconvError):
    exit_code = 3


class SolverAccuracyError(UpconvError):
    exit_code = 3


class EmptyResponseError(UpconvError):
    exit_code = 3


class FitError(UpconvError):
    exit_code = 3

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class UndefinedNormalizationError(UpconvError):
    exit_code = 3


class UnsupportedOracleError(UpconvError, TypeError):
    exit_code = 2


class RegimeViolation(UpconvError):
    exit_code = 4


class MultipleRootsWarning(UserWarning):
    pass
