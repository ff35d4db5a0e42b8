"""Exception hierarchy shared across the package.

Two families matter to callers: :class:`InputError` covers malformed or
inconsistent input data, :class:`EstimationError` covers failures raised
while fitting models or computing estimates.  The CLI maps the former to
exit code 2 and the latter to exit code 3.
"""

from __future__ import annotations

from typing import Sequence


class DidError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DidError):
    """Malformed input data or configuration."""


class SchemaError(InputError):
    """A column, label, or value does not match the expected schema."""


class IncompletePanelError(InputError):
    """A unit is missing one or more (t, m) outcome cells."""


class ConsistencyError(InputError):
    """Rows belonging to one unit disagree on a value that must be constant."""


class EstimationError(DidError):
    """Failure during model fitting or effect estimation."""


class SingularDesignError(EstimationError):
    """Design matrix is rank deficient."""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = tuple(columns)


class UnderdeterminedError(EstimationError):
    """Fewer observations than coefficients."""


class DegenerateResponseError(EstimationError):
    """Binary response contains a single class."""


class SeparationError(EstimationError):
    """Logistic fit diverged, indicating (quasi-)separated data."""


class NonoverlapError(EstimationError):
    """Fitted propensities at or above 1 for some units (positivity failure)."""

    def __init__(self, message: str, unit_ids: Sequence[str] = ()):
        super().__init__(message)
        self.unit_ids = tuple(unit_ids)


class GroupEmptyError(EstimationError):
    """A comparison group required by the estimand has no units."""


class WindowBoundsError(EstimationError):
    """An aggregation window refers to observation times outside 1..n_m."""


class DegenerateComparisonError(EstimationError):
    """A pre-trends comparison of an observation time with itself."""


class UnstableRatioError(EstimationError):
    """Relative-effect denominator too close to zero."""


class InferenceUnstableError(EstimationError):
    """Too many bootstrap replicates failed to produce an estimate."""


class DegenerateAdjacencyError(EstimationError):
    """A taxed zone has no listed neighbors, so its measures cannot be split."""


class InfeasibleClusterError(EstimationError):
    """More clusters requested than points available."""
