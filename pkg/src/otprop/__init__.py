"""Class-proportion estimation and label transfer between labelled and unlabelled point clouds."""
from .core import (
    ClassPartition,
    CostSpec,
    DualPotential,
    NumericalAbort,
    ProbabilityVector,
    SolverConfig,
    ValidationError,
    WeightedSample,
    validate_simplex,
)
from .data import (
    MixtureSpec,
    ShiftMap,
    load_csv,
    preprocess,
    random_mixture,
    simulate_pair,
    two_class_mixture,
)
from .evaluation import bland_altman_points, error_summary, kl_divergence
from .proportions import (
    GammaOperator,
    ProportionEstimate,
    estimate,
    estimate_descent_ascent,
    estimate_minmax_swap,
    profile_two_class,
    select_best_source,
)
from .semidual import dense_sinkhorn_oracle, evaluate_w, robbins_monro_ascent, w_hat
from .transfer import hard_assign, soft_assign, transfer_labels

__version__ = "0.1.0"

__all__ = [
    "ClassPartition",
    "CostSpec",
    "DualPotential",
    "GammaOperator",
    "MixtureSpec",
    "NumericalAbort",
    "ProbabilityVector",
    "ProportionEstimate",
    "ShiftMap",
    "SolverConfig",
    "ValidationError",
    "WeightedSample",
    "bland_altman_points",
    "dense_sinkhorn_oracle",
    "error_summary",
    "estimate",
    "estimate_descent_ascent",
    "estimate_minmax_swap",
    "evaluate_w",
    "hard_assign",
    "kl_divergence",
    "load_csv",
    "preprocess",
    "profile_two_class",
    "random_mixture",
    "robbins_monro_ascent",
    "select_best_source",
    "simulate_pair",
    "soft_assign",
    "transfer_labels",
    "two_class_mixture",
    "validate_simplex",
    "w_hat",
]
