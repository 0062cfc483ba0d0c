"""Exception hierarchy.

Every error carries its class name as the diagnostic token printed by the
CLI, so the names below are part of the command-line contract.
"""

from __future__ import annotations


class FundselError(Exception):
    """Base class for all package errors."""

    exit_code = 2

    @property
    def name(self) -> str:
        return type(self).__name__


class DataError(FundselError):
    """Input data is missing, malformed or unusable."""

    exit_code = 2


class NumericalError(FundselError):
    """A numerical routine failed (divergence, singular system)."""

    exit_code = 3


# panel ingestion
class MissingFile(DataError):
    pass


class SchemaError(DataError):
    pass


class DuplicateQuarter(DataError):
    pass


class NonPositiveLevel(DataError):
    pass


class GapInSeries(DataError):
    pass


class EmptyUniverse(DataError):
    pass


# preprocessing
class AllFeaturesDropped(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class AllMissing(DataError):
    pass


class TooFewRows(DataError):
    pass


class NoOverlap(DataError):
    pass


class WindowTooShort(DataError):
    pass


# models
class DimensionMismatch(DataError):
    pass


class DegenerateTargets(DataError):
    pass


class ScalerUnset(FundselError):
    exit_code = 1


class DegenerateRange(DataError):
    pass


class EmptyInput(DataError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


# backtest
class UniverseTooSmall(DataError):
    pass


class MissingSample(DataError):
    pass


class MissingRealized(DataError):
    pass
