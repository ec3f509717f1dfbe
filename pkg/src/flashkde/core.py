"""Shared types, Gaussian kernel primitives and bandwidth rules.

Sample sets are plain ``numpy`` arrays of shape ``(n, d)``; :func:`as_samples`
is the single place where they are validated and normalised to contiguous
float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "Method",
    "Engine",
    "Bandwidth",
    "EstimatorConfig",
    "DensityResult",
    "DegenerateDataError",
    "ScoreUnderflowError",
    "as_samples",
    "gaussian_kernel",
    "laplace_corrected_kernel",
    "silverman_bandwidth",
    "silverman_prefactor",
    "sdkde_bandwidth",
    "DEFAULT_TILE_M",
    "DEFAULT_TILE_N",
]

DEFAULT_TILE_M = 64
DEFAULT_TILE_N = 1024


class Method(str, enum.Enum):
    KDE = "kde"
    SDKDE = "sdkde"
    LAPLACE = "laplace"


class Engine(str, enum.Enum):
    NAIVE = "naive"
    FLASH = "flash"


class DegenerateDataError(ValueError):
    """Raised when a data-driven bandwidth rule sees zero spread."""


class ScoreUnderflowError(FloatingPointError):
    """The kernel sum in the score denominator underflowed to zero."""

    def __init__(self, index: int):
        super().__init__(
            f"score denominator underflowed to 0 at evaluation point {index}; "
            "the score bandwidth is too small for this point"
        )
        self.index = index


def as_samples(data, name: str = "samples") -> np.ndarray:
    """Return ``data`` as a C-contiguous float64 ``(n, d)`` array.

    A 1-D input is read as ``n`` scalar samples (``d == 1``).
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have n >= 1 and d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return np.ascontiguousarray(arr)


def _check_positive(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


@dataclass(frozen=True)
class Bandwidth:
    """Evaluation bandwidth ``h`` and score-estimation bandwidth ``h_score``.

    ``h_score`` defaults to ``h``. Use :meth:`with_score_rule` with
    ``"half"`` to get ``h_score = h / sqrt(2)`` (score kernel variance h^2/2).
    """

    h: float
    h_score: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "h", _check_positive(self.h, "h"))
        hs = self.h if self.h_score is None else self.h_score
        object.__setattr__(self, "h_score", _check_positive(hs, "h_score"))

    @classmethod
    def with_score_rule(cls, h: float, rule: str = "same") -> "Bandwidth":
        if rule == "same":
            return cls(h, h)
        if rule == "half":
            return cls(h, h / math.sqrt(2.0))
        raise ValueError(f"unknown score bandwidth rule {rule!r} (expected 'same' or 'half')")


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method
    bandwidth: Bandwidth
    engine: Engine = Engine.FLASH
    tile_m: int = DEFAULT_TILE_M
    tile_n: int = DEFAULT_TILE_N
    fused: bool = True
    threads: Optional[int] = None
    fast: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "engine", Engine(self.engine))
        if int(self.tile_m) < 1 or int(self.tile_n) < 1:
            raise ValueError("tile_m and tile_n must be >= 1")
        if self.threads is not None and int(self.threads) < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class DensityResult:
    values: np.ndarray
    negative_mass_estimate: Optional[float] = None
    debiased_samples: Optional[np.ndarray] = field(default=None, repr=False)


def _kernel_args(r2, h, d):
    r2 = np.asarray(r2, dtype=np.float64)
    if not np.all(np.isfinite(r2)):
        raise ValueError("r2 must be finite")
    if np.any(r2 < 0):
        raise ValueError("r2 must be nonnegative")
    h = _check_positive(h, "h")
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    return r2, h, int(d)


def _gaussian_norm(h: float, d: int) -> float:
    return (2.0 * math.pi) ** (-0.5 * d) * h ** (-d)


def gaussian_kernel(r2, h: float, d: int):
    """Isotropic Gaussian kernel ``K_h`` evaluated at squared radius ``r2``."""
    r2, h, d = _kernel_args(r2, h, d)
    out = _gaussian_norm(h, d) * np.exp(-r2 / (2.0 * h * h))
    return out[()] if out.ndim == 0 else out


def laplace_corrected_kernel(r2, h: float, d: int):
    """``K_h - (h^2/2) * Laplacian(K_h)``, i.e. ``K_h * (1 + d/2 - r2/(2h^2))``.

    Negative exactly when ``r2 > (2 + d) h^2``.
    """
    r2, h, d = _kernel_args(r2, h, d)
    u = r2 / (2.0 * h * h)
    out = _gaussian_norm(h, d) * np.exp(-u) * ((1.0 + 0.5 * d) - u)
    return out[()] if out.ndim == 0 else out


def _mean_std(samples) -> tuple[np.ndarray, float]:
    x = as_samples(samples)
    if x.shape[0] < 2:
        raise ValueError("bandwidth rules need at least 2 samples")
    sigma = float(np.mean(np.std(x, axis=0, ddof=1)))
    if not sigma > 0.0:
        raise DegenerateDataError("samples have zero variance in every dimension")
    return x, sigma


def silverman_prefactor(d: int) -> float:
    return (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0))


def silverman_bandwidth(samples) -> float:
    """Multivariate rule of thumb with the mean per-dimension standard deviation."""
    x, sigma = _mean_std(samples)
    n, d = x.shape
    return sigma * silverman_prefactor(d) * n ** (-1.0 / (d + 4.0))


def sdkde_bandwidth(samples, c: Optional[float] = None) -> float:
    """Bandwidth at the debiased rate: ``c * sigma * n^(-1/(d+8))``.

    ``c`` defaults to the Silverman prefactor for the sample dimension.
    """
    x, sigma = _mean_std(samples)
    n, d = x.shape
    if c is None:
        c = silverman_prefactor(d)
    c = _check_positive(c, "c")
    return c * sigma * n ** (-1.0 / (d + 8.0))
