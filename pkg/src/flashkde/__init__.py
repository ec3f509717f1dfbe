"""Blocked Gaussian KDE, score-debiased KDE and Laplace-corrected KDE on the CPU."""

from .core import (
    Bandwidth,
    DegenerateDataError,
    DensityResult,
    Engine,
    EstimatorConfig,
    Method,
    ScoreUnderflowError,
    as_samples,
    gaussian_kernel,
    laplace_corrected_kernel,
    sdkde_bandwidth,
    silverman_bandwidth,
)
from .engine import TilePlan, kde_flash, laplace_flash, pairwise_sq_dists_block, score_flash, sdkde_flash
from .estimators import estimate, select_bandwidth
from .oracle import kde_naive, laplace_naive, score_naive, sdkde_naive

__version__ = "0.1.0"

__all__ = [
    "Bandwidth", "DegenerateDataError", "DensityResult", "Engine", "EstimatorConfig", "Method",
    "ScoreUnderflowError", "as_samples", "gaussian_kernel", "laplace_corrected_kernel",
    "sdkde_bandwidth", "silverman_bandwidth", "TilePlan", "kde_flash", "laplace_flash",
    "pairwise_sq_dists_block", "score_flash", "sdkde_flash", "estimate", "select_bandwidth",
    "kde_naive", "laplace_naive", "score_naive", "sdkde_naive",
]
