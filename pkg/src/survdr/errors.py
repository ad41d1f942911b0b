"""Exception hierarchy.

Data and configuration problems derive from :class:`DataError` (CLI exit
code 2); numerical failures derive from :class:`EstimationError`.
"""


class SurvdrError(Exception):
    """Base class for all package errors."""


class DataError(SurvdrError):
    """Input data or configuration is unusable."""


class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: non-numeric value {value!r}")
        self.row = row
        self.column = column


class NonPositiveTime(DataError):
    def __init__(self, row, value):
        super().__init__(f"row {row}: time must be positive and finite, got {value!r}")
        self.row = row


class InvalidIndicator(DataError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: expected 0 or 1, got {value!r}")
        self.row = row
        self.column = column


class DimensionMismatch(DataError):
    pass


class ConfigError(DataError):
    def __init__(self, message, line=None, key=None):
        where = f"line {line}: " if line is not None else ""
        what = f"key {key!r}: " if key is not None else ""
        super().__init__(where + what + message)
        self.line = line
        self.key = key


class EstimationError(SurvdrError):
    """A model could not be fitted or an estimator could not be evaluated."""


class NoConvergence(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class Separation(EstimationError):
    pass


class NoEvents(EstimationError):
    pass


class NonfiniteEstimate(EstimationError):
    pass


class EmptyInterval(EstimationError):
    pass


class NoCensoringEvents(EstimationError):
    pass


class ZeroCensoringSurvival(EstimationError):
    pass


class PositivityViolation(EstimationError):
    def __init__(self, index, score):
        super().__init__(
            f"propensity score {score:.3g} for subject {index} is outside (1e-6, 1 - 1e-6)"
        )
        self.index = index
        self.score = score


class BothExposuresRequired(EstimationError):
    def __init__(self):
        super().__init__("both exposure levels required")


class EstimatorFailed(EstimationError):
    """Too many bootstrap or simulation replicates failed."""

    def __init__(self, n_failed, n_total):
        super().__init__(f"{n_failed} of {n_total} replicates failed (limit is 5%)")
        self.n_failed = n_failed
        self.n_total = n_total
