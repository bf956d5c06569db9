"""Treatment effect estimation with possibly invalid instruments.

A flexible first stage (random forest, polynomial basis or boosting) is
written as a weighting matrix; the second stage adjusts for a nested chain of
violation spaces, corrects the overfitting bias, tests instrument strength
and selects the violation space by a bootstrap comparison.
"""

__version__ = "0.1.0"

from .aggregate import MultiSplitResult, median_ci, multisplit_ci
from .data import Dataset, build_w, load_dataset, save_dataset, split_sample
from .errors import (DataError, DegenerateError, DimensionError, PerfectFitError, SchemaError,
                     SingularBaseError, SizeError, TsciError, WeakIVError)
from .forest import ForestParams, WeightMatrix, fit_forest, forest_weights
from .pipeline import Settings, SplitResult, run_split, run_splits
from .selection import SelectionReport, select
from .strength import StrengthResult, strength_test
from .violation import TransformMatrix, transform_matrix, violation_chain

__all__ = [
    "DataError", "Dataset", "DegenerateError", "DimensionError", "ForestParams", "MultiSplitResult",
    "PerfectFitError", "SchemaError", "SelectionReport", "Settings", "SingularBaseError", "SizeError",
    "SplitResult", "StrengthResult", "TransformMatrix", "TsciError", "WeakIVError", "WeightMatrix",
    "build_w", "fit_forest", "forest_weights", "load_dataset", "median_ci", "multisplit_ci",
    "run_split", "run_splits", "save_dataset", "select", "split_sample", "strength_test",
    "transform_matrix", "violation_chain",
]
