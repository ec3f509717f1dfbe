"""Naive reference estimators.

Every routine walks the evaluation points one at a time and forms
``x - x_i`` by direct subtraction. No norm expansion, no blocking: these
are the ground truth the flash engine is checked against, so they are kept
structurally different from it on purpose.
"""

from __future__ import annotations

import numpy as np

from .core import (
    Bandwidth,
    DensityResult,
    ScoreUnderflowError,
    _check_positive,
    as_samples,
    gaussian_kernel,
    laplace_corrected_kernel,
)

__all__ = ["kde_naive", "score_naive", "sdkde_naive", "laplace_naive"]


def _pair(train, queries):
    x = as_samples(train, "train")
    y = as_samples(queries, "queries")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: train has d={x.shape[1]}, queries d={y.shape[1]}")
    return x, y


def _sq_dists_to(point: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = point - x
    return np.einsum("ij,ij->i", diff, diff)


def kde_naive(train, queries, h: float) -> DensityResult:
    x, y = _pair(train, queries)
    h = _check_positive(h, "h")
    d = x.shape[1]
    values = np.empty(y.shape[0])
    for j in range(y.shape[0]):
        values[j] = np.mean(gaussian_kernel(_sq_dists_to(y[j], x), h, d))
    return DensityResult(values)


def score_naive(train, eval_points, h_score: float) -> np.ndarray:
    """Empirical score ``grad(p_hat)/p_hat`` of the KDE of ``train``.

    Raises :class:`ScoreUnderflowError` if every kernel weight underflows
    at some evaluation point.
    """
    x, y = _pair(train, eval_points)
    hs = _check_positive(h_score, "h_score")
    inv = -0.5 / (hs * hs)
    out = np.empty_like(y)
    for j in range(y.shape[0]):
        diff = y[j] - x
        phi = np.exp(np.einsum("ij,ij->i", diff, diff) * inv)
        den = phi.sum()
        if den == 0.0:
            raise ScoreUnderflowError(j)
        out[j] = -(phi @ diff) / (hs * hs * den)
    return out


def sdkde_naive(train, queries, bw: Bandwidth) -> DensityResult:
    x, y = _pair(train, queries)
    shifted = x + (0.5 * bw.h * bw.h) * score_naive(x, x, bw.h_score)
    res = kde_naive(shifted, y, bw.h)
    res.debiased_samples = shifted
    return res


def laplace_naive(train, queries, h: float) -> DensityResult:
    x, y = _pair(train, queries)
    h = _check_positive(h, "h")
    d = x.shape[1]
    values = np.empty(y.shape[0])
    for j in range(y.shape[0]):
        values[j] = np.mean(laplace_corrected_kernel(_sq_dists_to(y[j], x), h, d))
    return DensityResult(values)
