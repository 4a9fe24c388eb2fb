"""Piecewise accelerated failure time model with a treatment lag.

The treatment effect switches on only after a lag ``tau``: event time on
the treated arm is ``tau + exp(alpha) * (t0 - tau)`` whenever the
untreated time ``t0`` exceeds the lag, and is unchanged otherwise.
Estimation maximizes a kernel-smoothed rank likelihood of the residuals,
so no error distribution is assumed.
"""

from .data import (
    CovariateTransform,
    Finding,
    SubjectRecord,
    TrialDataset,
    load_dataset,
    serialize_dataset,
    standardize_covariate,
    validate,
)
from .errors import (
    DataError,
    OptimizationError,
    PaftError,
    QuadratureError,
    ResamplingError,
)
from .inference import (
    BootstrapResult,
    FitConfig,
    PermutationResult,
    bootstrap_ci,
    fit,
    percentile_ranks,
    permutation_test,
)
from .likelihood import (
    PaftParams,
    SmoothedLikelihood,
    SmoothingConfig,
    bandwidth_rule,
    log_likelihood,
    residual_exact,
    residual_smoothed,
    sigmoid_weight,
)
from .optim import (
    FitResult,
    OptimizerConfig,
    OptimResult,
    StageConfig,
    StageRecord,
    fit_multi_stage,
    fit_single_stage,
    nelder_mead,
    quasi_newton,
)
from .residuals import (
    BenefitScore,
    KmCurve,
    estimate_residuals,
    km_estimate,
    prob_death_before_tau,
)
from .simulate import (
    BiasReport,
    CovariateSpec,
    FitStrategy,
    SimDesign,
    calibrate_censoring,
    generate_trial,
    run_replications,
)
from .tree import (
    RegressionTree,
    TreeConfig,
    TreeNode,
    fit_regression_tree,
    summarize_leaves,
)

__version__ = "0.1.0"

__all__ = [
    "BenefitScore",
    "BiasReport",
    "BootstrapResult",
    "CovariateSpec",
    "CovariateTransform",
    "DataError",
    "Finding",
    "FitConfig",
    "FitResult",
    "FitStrategy",
    "KmCurve",
    "OptimResult",
    "OptimizationError",
    "OptimizerConfig",
    "PaftError",
    "PaftParams",
    "PermutationResult",
    "QuadratureError",
    "RegressionTree",
    "ResamplingError",
    "SimDesign",
    "SmoothedLikelihood",
    "SmoothingConfig",
    "StageConfig",
    "StageRecord",
    "SubjectRecord",
    "TreeConfig",
    "TreeNode",
    "TrialDataset",
    "bandwidth_rule",
    "bootstrap_ci",
    "calibrate_censoring",
    "estimate_residuals",
    "fit",
    "fit_multi_stage",
    "fit_regression_tree",
    "fit_single_stage",
    "generate_trial",
    "km_estimate",
    "load_dataset",
    "log_likelihood",
    "nelder_mead",
    "percentile_ranks",
    "permutation_test",
    "prob_death_before_tau",
    "quasi_newton",
    "residual_exact",
    "residual_smoothed",
    "run_replications",
    "serialize_dataset",
    "sigmoid_weight",
    "standardize_covariate",
    "summarize_leaves",
    "validate",
]
