"""Test error estimation after selecting a model by minimum validation error."""

from .bootstrap import ConfidenceInterval, bootstrap_ci, resample, widening_term
from .contrast import ContrastEstimate, contrast_estimate, debias_contrast, nominal_error
from .core import (
    ErrorMatrix,
    ErrorMatrixError,
    FoldPartition,
    SelectionResult,
    column_means,
    fold_means,
    make_folds,
    select_min,
)
from .randomized import (
    NoiseConfig,
    RandomizedEstimate,
    default_sigma0,
    draw_noise_pair,
    pseudo_errors,
    randomized_estimate,
    sample_covariance,
)

__version__ = "0.1.0"
