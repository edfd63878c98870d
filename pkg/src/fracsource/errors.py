"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to, so that the command line
front end can translate failures into the stable exit-code contract.
"""

from __future__ import annotations


class FracSourceError(Exception):
    exit_code = 3


class InvalidArgumentError(FracSourceError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    exit_code = 2


class BranchError(InvalidArgumentError):
    """Argument lies on the closed negative real axis (branch cut of p**alpha)."""


class CoefficientError(InvalidArgumentError):
    """Coefficient field violates symmetry, ellipticity, positivity or bounds."""


class PreconditionError(InvalidArgumentError):
    pass


class NumericError(FracSourceError):
    exit_code = 3


class ConsistencyError(NumericError):
    """Two independent evaluation routes disagree beyond tolerance."""


class ConditioningError(NumericError):
    def __init__(self, message: str, condition_number: float):
        super().__init__(message)
        self.condition_number = condition_number


class DataInsufficiencyError(NumericError):
    pass


class UnidentifiableError(NumericError):
    pass


class AccuracyError(FracSourceError):
    """Requested accuracy could not be met; ``bound`` is what was achieved."""

    exit_code = 4

    def __init__(self, message: str, bound: float = float("inf")):
        super().__init__(message)
        self.bound = bound


class TruncationError(AccuracyError):
    pass


class RegularizationError(AccuracyError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
