"""Exception types raised across the package.

Every error carries enough context to be reported by the CLI without a traceback.
"""

from __future__ import annotations


class MedfxError(Exception):
    """Base class for all package errors.

    The estimation pipeline sets ``step`` on errors escaping one of its stages.
    """

    step: str | None = None


class SchemaError(MedfxError):
    """Input table does not match the expected column schema."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class GroupTooSmall(MedfxError):
    def __init__(self, message: str, *, group: int | None = None, size: int | None = None):
        super().__init__(message)
        self.group = group
        self.size = size


class DegenerateColumn(MedfxError):
    def __init__(self, column: int):
        super().__init__(f"column {column} has zero variance; cannot standardize")
        self.column = column


class NotConverged(MedfxError):
    def __init__(self, message: str, fit=None):
        super().__init__(message)
        self.fit = fit


class StillInfeasible(MedfxError):
    def __init__(self, message: str, log: list | None = None):
        super().__init__(message)
        self.log = list(log or [])


class SingularSigma(MedfxError):
    pass


class DimensionMismatch(MedfxError):
    pass


class DegenerateTreatment(MedfxError):
    pass


class TooManyFailures(MedfxError):
    def __init__(self, message: str, failures: int = 0, total: int = 0):
        super().__init__(message)
        self.failures = failures
        self.total = total

