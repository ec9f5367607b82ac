"""Exception and warning hierarchy.

Two families matter to callers: :class:`InputError` covers malformed data or
configuration (the CLI maps it to exit code 2) and :class:`EstimationError`
covers estimators that cannot produce a value on otherwise valid input (exit
code 1).
"""


class ZeroScaleError(Exception):
    """Base class for all package errors."""


class InputError(ZeroScaleError, ValueError):
    """Malformed input data, parameters or configuration."""


class EstimationError(ZeroScaleError, ArithmeticError):
    """An estimator failed on valid input."""


# -- dataset -----------------------------------------------------------------

class MissingColumn(InputError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class NonNumericCell(InputError):
    def __init__(self, column, row, value):
        self.column, self.row, self.value = column, row, value
        super().__init__(f"non-numeric cell {value!r} in column {column!r} at row {row}")


class NegativeOutcome(InputError):
    def __init__(self, row, value):
        self.row, self.value = row, value
        super().__init__(f"negative outcome {value!r} at row {row}")


class EmptyDataset(InputError):
    pass


class NotBinary(InputError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} must be {{0,1}}-valued")


class NonPositiveScale(InputError):
    pass


# -- transforms ----------------------------------------------------------------

class DomainError(InputError):
    pass


class MonotonicityViolation(InputError):
    pass


class NonFiniteInput(InputError):
    pass


# -- regression / poisson ------------------------------------------------------

class RankDeficient(EstimationError):
    pass


class TooFewClusters(InputError):
    pass


class Separation(EstimationError):
    pass


class NoConvergence(EstimationError):
    pass


class AllZeroOutcome(EstimationError):
    pass


class EmptyCell(EstimationError):
    pass


class ZeroCellMean(EstimationError):
    pass


class CollinearPeriods(EstimationError):
    pass


# -- scale sensitivity ---------------------------------------------------------

class NoExtensiveMargin(EstimationError):
    pass


class BracketNotFound(EstimationError):
    pass


# -- target parameters -----------------------------------------------------------

class ZeroControlMean(EstimationError):
    pass


class ZeroControlMedian(EstimationError):
    pass


class NonPositiveDenominator(InputError):
    pass


class EmptyReference(InputError):
    pass


# -- bounds ----------------------------------------------------------------------

class NoPositiveOutcomes(EstimationError):
    pass


class ZeroTrimDenominator(EstimationError):
    pass


class InvalidC(InputError):
    pass


class DegenerateShares(EstimationError):
    pass


class NoAlwaysTakers(EstimationError):
    pass


class ZeroComplierControlMean(EstimationError):
    pass


# -- inference -------------------------------------------------------------------

class BootstrapFailure(EstimationError):
    """More than the allowed fraction of bootstrap draws failed."""

    def __init__(self, message, failures):
        self.failures = failures
        super().__init__(message)


# -- identification lab ----------------------------------------------------------

class InfeasibleMarginals(InputError):
    pass


class UnboundedG(InputError):
    pass


class MonotonicityCellViolated(InputError):
    pass


# -- warnings --------------------------------------------------------------------

class WeakFirstStage(UserWarning):
    pass


class SharesOutOfSimplex(UserWarning):
    pass
