"""Exception hierarchy.

Each error class carries the process exit code the CLI maps it to.
"""


class TsciError(Exception):
    exit_code = 1


class SchemaError(TsciError):
    """A required column is missing from the input file."""

    exit_code = 3


class DataError(TsciError):
    """A cell could not be parsed or is not finite."""

    exit_code = 3

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SizeError(TsciError):
    exit_code = 3


class DimensionError(TsciError):
    exit_code = 4


class DegenerateError(TsciError):
    """Numerical degeneracy: a projection, denominator or variance collapsed."""

    exit_code = 4


class WeakIVError(DegenerateError):
    """Non-positive curvature denominator D'M(V)D."""


class PerfectFitError(DegenerateError):
    """First-stage residuals are identically zero; strength is undefined."""


class SingularBaseError(DegenerateError):
    """A boosting base learner has a singular hat matrix."""
