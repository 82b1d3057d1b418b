"""Sparse functional Gaussian graphical models from partially observed
multivariate functional data."""

from funggm.grids import (
    DimensionError,
    DomainMask,
    EmptyDomainError,
    FunctionalDataset,
    Grid,
    inner_product,
    restrict,
    vector_inner_product,
)
from funggm.moments import (
    CovarianceField,
    EigenSystem,
    averaged_kernel,
    eigendecompose_kernel,
    estimate_covariance,
    estimate_mean,
    select_truncation,
    standardize,
)
from funggm.scores import ScoreSet, observed_scores, sample_covariances
from funggm.jgl import (
    PenaltySpec,
    PrecisionEnsemble,
    gamma1_max,
    prox_sparse_group,
    refit_mle,
    solve_jgl,
)
from funggm.pipeline import FitConfig, FitResult, ebic, fit, loglik_value
from funggm.simulate import (
    GraphSpec,
    GroundTruth,
    generate_replication,
    inject_missingness,
    make_adjacency,
    make_precisions,
    synthesize,
)
from funggm.metrics import mse_theta, mse_x, roc_auc

__all__ = [
    "CovarianceField",
    "DimensionError",
    "DomainMask",
    "EigenSystem",
    "EmptyDomainError",
    "FitConfig",
    "FitResult",
    "FunctionalDataset",
    "GraphSpec",
    "Grid",
    "GroundTruth",
    "PenaltySpec",
    "PrecisionEnsemble",
    "ScoreSet",
    "averaged_kernel",
    "ebic",
    "eigendecompose_kernel",
    "estimate_covariance",
    "estimate_mean",
    "fit",
    "gamma1_max",
    "generate_replication",
    "inject_missingness",
    "inner_product",
    "loglik_value",
    "make_adjacency",
    "make_precisions",
    "mse_theta",
    "mse_x",
    "observed_scores",
    "prox_sparse_group",
    "refit_mle",
    "restrict",
    "roc_auc",
    "sample_covariances",
    "select_truncation",
    "solve_jgl",
    "standardize",
    "synthesize",
    "vector_inner_product",
]

__version__ = "0.1.0"
