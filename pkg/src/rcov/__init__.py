"""Matrix-free robust covariance estimation from adversarially corrupted samples.

Estimates the covariance of zero-mean data of which an ε-fraction has been
arbitrarily replaced, via iterative spectral reweighting over the implicit
tensored points Y_i ⊗ Y_i.  No d²×d² (or d²×N) matrix is ever materialized:
everything runs through Kronecker-structured matvecs, sketched matrix
exponentials, and power iteration.

Entry points: :func:`robust_covariance` (functional), ``RobustCovariance``
(scikit-learn estimator, imported lazily), and the ``rcov`` command line.
"""

from .corruption import (
    STRATEGIES,
    CorruptionSpec,
    GoodnessReport,
    LabeledDataset,
    corrupt,
    estimate_goodness,
    sample_gaussian,
    tensor_covariance_check,
)
from .estimator import (
    CovarianceEstimate,
    EstimatorConfig,
    PhaseRecord,
    first_phase,
    initial_upper_bound,
    mahalanobis_error,
    robust_covariance,
    second_phase,
)
from .exceptions import (
    BudgetExceededError,
    DegenerateInputError,
    DimensionError,
    EmptyMassError,
    FileFormatError,
    PruneFailure,
    RcovError,
    SpecError,
)
from .io import load_binary, load_csv, load_dataset, save_binary, save_csv, save_dataset
from .prune import naive_prune
from .que_filter import FilterConfig, FilterResult, filter_coarse, filter_fine
from .score_oracle import (
    OracleParams,
    ScoreReport,
    approximate_score,
    choose_alpha,
    exact_score,
)
from .tensor_linalg import JLSketch, MatVecHandle, ZOps, flatten, unflatten

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError",
    "CorruptionSpec",
    "CovarianceEstimate",
    "DegenerateInputError",
    "DimensionError",
    "EmptyMassError",
    "EstimatorConfig",
    "FileFormatError",
    "FilterConfig",
    "FilterResult",
    "GoodnessReport",
    "JLSketch",
    "LabeledDataset",
    "MatVecHandle",
    "OracleParams",
    "PhaseRecord",
    "PruneFailure",
    "RcovError",
    "RobustCovariance",
    "STRATEGIES",
    "ScoreReport",
    "SpecError",
    "ZOps",
    "approximate_score",
    "choose_alpha",
    "corrupt",
    "estimate_goodness",
    "exact_score",
    "filter_coarse",
    "filter_fine",
    "first_phase",
    "flatten",
    "initial_upper_bound",
    "load_binary",
    "load_csv",
    "load_dataset",
    "mahalanobis_error",
    "naive_prune",
    "robust_covariance",
    "sample_gaussian",
    "save_binary",
    "save_csv",
    "save_dataset",
    "second_phase",
    "tensor_covariance_check",
    "unflatten",
]


def __getattr__(name):
    # RobustCovariance pulls in scikit-learn; load it only on first use so
    # `import rcov` (and the CLI) stay light.
    if name == "RobustCovariance":
        from .sklearn_api import RobustCovariance

        return RobustCovariance
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
