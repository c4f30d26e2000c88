"""Bias-free regression under target transformation.

Transformed squared-error models converge well on skewed targets but
back-transform to a biased conditional-mean estimate.  This package
implements the joint bias-learning fix (a stop-gradded ratio branch whose
product with the back-transformed point prediction is exactly unbiased at
the optimum), its generalization to arbitrary point losses and slope
functions, the classical post-hoc corrections it is compared against, a
synthetic benchmark with closed-form oracles, and the metric suite that
makes unbiasedness measurable.
"""

from .diffcore import ParamStore, Tape
from .metrics import EvalReport, evaluate
from .oracles import OracleResult
from .regressors import ArchSpec, Dataset, RegressorSpec, TrainedRegressor, train
from .synthdata import DISTRIBUTION_IDS, RngStream, sample
from .transforms import TargetTransform, make_transform

__version__ = "0.1.0"

__all__ = [
    "ParamStore",
    "Tape",
    "EvalReport",
    "evaluate",
    "OracleResult",
    "ArchSpec",
    "Dataset",
    "RegressorSpec",
    "TrainedRegressor",
    "train",
    "DISTRIBUTION_IDS",
    "RngStream",
    "sample",
    "TargetTransform",
    "make_transform",
    "__version__",
]
