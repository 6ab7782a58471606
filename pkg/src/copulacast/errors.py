"""Exception hierarchy.

Every error raised by the library derives from :class:`CopulacastError`. The
four family bases carry the CLI exit code so the command line can map an
exception to a process status without a lookup table.
"""


class CopulacastError(Exception):
    exit_code = 1


class ConfigError(CopulacastError, ValueError):
    exit_code = 2


class DataError(CopulacastError, ValueError):
    exit_code = 3


class NumericError(CopulacastError, ArithmeticError):
    exit_code = 4


class LineageError(CopulacastError):
    exit_code = 5


# data ingestion / windowing
class MissingColumn(DataError):
    pass


class NonMonotonicTimestamps(DataError):
    pass


class NonNumericCell(DataError):
    pass


class MissingValue(NonNumericCell):
    pass


class GapInHourlyGrid(DataError):
    pass


class GridNotCovering(DataError):
    pass


class AllZeroSeries(DataError):
    pass


class RangeTooShort(DataError):
    pass


class InsufficientData(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# marginals
class UnsortedQuantiles(DataError):
    pass


class BadKernel(DataError):
    pass


class DegenerateSamples(DataError):
    pass


class OutOfSupport(DataError):
    pass


class DomainError(DataError):
    pass


class DidNotConverge(NumericError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, loss):
        super().__init__(f"training loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


# copula
class MissingMarginal(DataError):
    pass


class ZeroVarianceRow(NumericError):
    def __init__(self, row, location, step):
        super().__init__(
            f"PIT row {row} (location {location}, step {step}) has zero variance"
        )
        self.row = row
        self.location = location
        self.step = step


class NotPositiveDefinite(NumericError):
    pass


# metrics
class MissingForecast(DataError):
    pass


class NoScenarios(DataError):
    pass


# pipeline lineage
class VersionMismatch(LineageError):
    pass


class StaleArtifact(LineageError):
    pass
