"""Exception hierarchy shared by every service."""
from typing import Any, Optional


class ActiveCqError(Exception):
    """Base class for all domain errors"""

    def __init__(self, message: str, **context: Any):
        self.message = message
        self.context = context
        super().__init__(message)


# Numerics
class NotSymmetricError(ActiveCqError):
    pass


class NotFactorizableError(ActiveCqError):
    pass


class DimensionMismatchError(ActiveCqError):
    pass


class NonFiniteError(ActiveCqError):
    pass


class InvalidScaleError(ActiveCqError):
    pass


class DegeneratePointsError(ActiveCqError):
    pass


class DegeneratePointsWarning(UserWarning):
    """All points coincide; a fallback bandwidth was used"""


# Kernels and models
class MissingBlockError(ActiveCqError):
    pass


class EmptyTrainingError(ActiveCqError):
    pass


class NonFiniteGradientError(ActiveCqError):
    pass


# Embeddings and estimators
class ZeroCountError(ActiveCqError):
    pass


class KernelMismatchError(ActiveCqError):
    pass


class MissingContextError(ActiveCqError):
    pass


class SamplerUnavailableError(ActiveCqError):
    pass


class EmptyAnchorsError(ActiveCqError):
    pass


# Acquisition
class NegativeVarianceError(ActiveCqError):
    pass


class PoolExhaustedError(ActiveCqError):
    pass


# Data generation and ingestion
class NoContinuousColumnsError(ActiveCqError):
    pass


class EmptyFileError(ActiveCqError):
    pass


class UnknownMechanismError(ActiveCqError):
    pass


class ParseError(ActiveCqError):
    """Malformed covariate file, located by 1-based file row and column name"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(message, row=row, column=column)


# Harness
class InconsistentKindError(ActiveCqError):
    pass


class LengthMismatchError(ActiveCqError):
    pass


class ReportMismatchError(ActiveCqError):
    """Aggregate tables that cannot be merged into one report"""
