"""Blocked "flash" estimators.

Pairwise squared distances are formed per tile through the norm expansion
``|a|^2 + |b|^2 - 2 a.b``, with the cross term computed as a dense matrix
product. Tile results are reduced immediately into per-row accumulators, so
no ``n_train x n_train`` or ``n_train x n_test`` matrix is ever stored; the
largest transient is one ``tile_m x tile_n`` buffer (two for the fused
Laplace kernel) per worker.

Work is split over row tiles: each worker owns a disjoint set of output rows
and visits column tiles in a fixed order, so results are bitwise
reproducible for a given tile plan regardless of thread count. ``fast=True``
splits over column tiles instead and merges partial sums in completion
order, which is not bitwise reproducible.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from .core import (
    DEFAULT_TILE_M,
    DEFAULT_TILE_N,
    Bandwidth,
    DensityResult,
    _check_positive,
    _gaussian_norm,
    as_samples,
)

__all__ = [
    "TilePlan",
    "ScoreAccumulator",
    "AllocationTracker",
    "track_allocations",
    "pairwise_sq_dists_block",
    "score_accumulate",
    "score_flash",
    "kde_flash",
    "laplace_flash",
    "sdkde_flash",
]

_EPS = np.finfo(np.float64).eps
# Values below this multiple of eps*(|a|^2+|b|^2) are rounding noise.
_SNAP_ULPS = 4.0


@dataclass(frozen=True)
class TilePlan:
    tile_m: int
    tile_n: int
    n_tiles_m: int
    n_tiles_n: int

    @classmethod
    def for_problem(cls, n_rows: int, n_cols: int, tile_m: int = DEFAULT_TILE_M,
                    tile_n: int = DEFAULT_TILE_N) -> "TilePlan":
        tile_m, tile_n = int(tile_m), int(tile_n)
        if tile_m < 1 or tile_n < 1:
            raise ValueError("tile sizes must be >= 1")
        # A tile never needs to be larger than the problem.
        tile_m = min(tile_m, n_rows)
        tile_n = min(tile_n, n_cols)
        return cls(tile_m, tile_n, -(-n_rows // tile_m), -(-n_cols // tile_n))

    def row_range(self, t: int, n_rows: int) -> tuple[int, int]:
        return t * self.tile_m, min((t + 1) * self.tile_m, n_rows)

    def col_range(self, t: int, n_cols: int) -> tuple[int, int]:
        return t * self.tile_n, min((t + 1) * self.tile_n, n_cols)


@dataclass
class ScoreAccumulator:
    """Per-train-point reductions of the score pass.

    ``phi_sum[i]`` is ``sum_j phi_ij`` (self term included) and
    ``weighted_sum[i]`` is row ``i`` of ``Phi @ X``.
    """

    phi_sum: np.ndarray
    weighted_sum: np.ndarray


class AllocationTracker:
    """Counts float64 scalars held in engine-owned buffers."""

    def __init__(self):
        self.current = 0
        self.peak = 0
        self._lock = threading.Lock()

    def _add(self, count: int):
        with self._lock:
            self.current += count
            self.peak = max(self.peak, self.current)

    @property
    def peak_bytes(self) -> int:
        return 8 * self.peak


_tracker: Optional[AllocationTracker] = None


@contextmanager
def track_allocations() -> Iterator[AllocationTracker]:
    """Record engine buffer usage for the duration of the ``with`` block."""
    global _tracker
    prev, _tracker = _tracker, AllocationTracker()
    try:
        yield _tracker
    finally:
        _tracker = prev


class _Buffers:
    """Engine buffers, reported to the active tracker until released."""

    def __init__(self):
        self._held = 0

    def empty(self, shape) -> np.ndarray:
        return self._take(np.empty(shape))

    def zeros(self, shape) -> np.ndarray:
        return self._take(np.zeros(shape))

    def _take(self, arr: np.ndarray) -> np.ndarray:
        if _tracker is not None:
            _tracker._add(arr.size)
            self._held += arr.size
        return arr

    def release(self):
        if _tracker is not None and self._held:
            _tracker._add(-self._held)
        self._held = 0


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        return os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _row_norms(x: np.ndarray, bufs: _Buffers) -> np.ndarray:
    out = bufs.empty(x.shape[0])
    np.einsum("ij,ij->i", x, x, out=out)
    return out


def _sq_dists_into(out: np.ndarray, a: np.ndarray, b: np.ndarray,
                   na: np.ndarray, nb: np.ndarray, clamp: bool = True) -> np.ndarray:
    np.matmul(a, b.T, out=out)
    out *= -2.0
    out += na[:, None]
    out += nb[None, :]
    if clamp:
        np.maximum(out, 0.0, out=out)
    return out


def _pair(a, b, names=("train", "queries")):
    a = as_samples(a, names[0])
    b = as_samples(b, names[1])
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {names[0]} has d={a.shape[1]}, "
                         f"{names[1]} d={b.shape[1]}")
    return a, b


def pairwise_sq_dists_block(a, b, clamp: bool = True) -> np.ndarray:
    """Squared distances between the rows of ``a`` and ``b`` via the norm expansion.

    With ``clamp`` (the default) results are nonnegative and entries within
    ``4 eps (|a|^2 + |b|^2)`` of zero, which is rounding noise, are set to 0
    so that identical rows give exactly 0.
    """
    a, b = _pair(a, b, ("a", "b"))
    na = np.einsum("ij,ij->i", a, a)
    nb = np.einsum("ij,ij->i", b, b)
    out = np.empty((a.shape[0], b.shape[0]))
    _sq_dists_into(out, a, b, na, nb, clamp=clamp)
    if clamp:
        scale = na[:, None] + nb[None, :]
        out[out < _SNAP_ULPS * _EPS * scale] = 0.0
    return out


# Tile visitors: ``visit(dist, scratch, cols, acc, i0, j0)`` consumes one
# distance tile (overwriting it) and adds into ``acc`` (rows i0:i0+len(acc)).
_Visitor = Callable[[np.ndarray, Optional[np.ndarray], np.ndarray, np.ndarray, int, int], None]


def _gaussian_visitor(h: float) -> _Visitor:
    scale = -0.5 / (h * h)

    def visit(dist, scratch, cols, acc, i0, j0):
        dist *= scale
        np.exp(dist, out=dist)
        acc[:, 0] += dist.sum(axis=1)

    return visit


def _affine_visitor(h: float, offset: float) -> _Visitor:
    """Accumulates ``sum_j exp(-u) * (offset - u)`` with ``u = r2 / (2 h^2)``."""
    inv = 0.5 / (h * h)

    def visit(dist, scratch, cols, acc, i0, j0):
        dist *= inv
        np.negative(dist, out=scratch)
        np.exp(scratch, out=scratch)
        np.subtract(offset, dist, out=dist)
        acc[:, 0] += np.einsum("ij,ij->i", scratch, dist)

    return visit


def _score_visitor(h_score: float) -> _Visitor:
    scale = -0.5 / (h_score * h_score)

    def visit(dist, scratch, cols, acc, i0, j0):
        dist *= scale
        np.exp(dist, out=dist)
        # The self pair is handled exactly by the caller: phi_ii = 1 and it
        # adds nothing to the numerator, so drop it here to avoid cancelling
        # x_i * phi_ii against x_i * sum_j phi_ij.
        lo = max(i0, j0)
        hi = min(i0 + dist.shape[0], j0 + dist.shape[1])
        if lo < hi:
            k = np.arange(lo, hi)
            dist[k - i0, k - j0] = 0.0
        acc[:, 0] += dist.sum(axis=1)
        acc[:, 1:] += dist @ cols

    return visit


def _stream(rows: np.ndarray, cols: np.ndarray, width: int, visit: _Visitor, *,
            tile_m: int, tile_n: int, threads: Optional[int], fast: bool,
            scratch: bool, bufs: _Buffers, acc: Optional[np.ndarray] = None) -> np.ndarray:
    """Accumulate ``visit`` over every (row tile, column tile) pair."""
    m, n = rows.shape[0], cols.shape[0]
    plan = TilePlan.for_problem(m, n, tile_m, tile_n)
    nr = _row_norms(rows, bufs)
    nc = nr if cols is rows else _row_norms(cols, bufs)
    if acc is None:
        acc = bufs.zeros((m, width))
    workers = _resolve_threads(threads)
    tile_size = plan.tile_m * plan.tile_n

    def run(row_tiles, col_tiles, target, local: _Buffers):
        flat = local.empty(tile_size)
        flat2 = local.empty(tile_size) if scratch else None
        for it in row_tiles:
            i0, i1 = plan.row_range(it, m)
            for jt in col_tiles:
                j0, j1 = plan.col_range(jt, n)
                shape = (i1 - i0, j1 - j0)
                size = shape[0] * shape[1]
                # Contiguous views so ragged edge tiles still hit the BLAS path.
                dist = flat[:size].reshape(shape)
                extra = flat2[:size].reshape(shape) if scratch else None
                _sq_dists_into(dist, rows[i0:i1], cols[j0:j1], nr[i0:i1], nc[j0:j1])
                visit(dist, extra, cols[j0:j1], target[i0:i1], i0, j0)
        return target

    row_tiles = range(plan.n_tiles_m)
    col_tiles = range(plan.n_tiles_n)
    if workers == 1:
        local = _Buffers()
        try:
            run(row_tiles, col_tiles, acc, local)
        finally:
            local.release()
        return acc

    locals_ = [_Buffers() for _ in range(workers)]
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            if not fast:
                chunks = [c for c in np.array_split(np.arange(plan.n_tiles_m), workers) if c.size]
                futures = [pool.submit(run, c, col_tiles, acc, locals_[k])
                           for k, c in enumerate(chunks)]
                for f in futures:
                    f.result()
            else:
                chunks = [c for c in np.array_split(np.arange(plan.n_tiles_n), workers) if c.size]
                futures = [pool.submit(run, row_tiles, c, locals_[k].zeros((m, width)), locals_[k])
                           for k, c in enumerate(chunks)]
                for f in as_completed(futures):
                    acc += f.result()
    finally:
        for lb in locals_:
            lb.release()
    return acc


def _score_offdiag(x: np.ndarray, hs: float, **opts) -> np.ndarray:
    """``[sum_{j!=i} phi_ij, sum_{j!=i} phi_ij x_j]`` per row, shape ``(n, 1 + d)``."""
    bufs = _Buffers()
    try:
        acc = _stream(x, x, 1 + x.shape[1], _score_visitor(hs), scratch=False, bufs=bufs, **opts)
    finally:
        bufs.release()
    return acc


def score_accumulate(train, h_score: float, *, tile_m: int = DEFAULT_TILE_M,
                     tile_n: int = DEFAULT_TILE_N, threads: Optional[int] = None,
                     fast: bool = False) -> ScoreAccumulator:
    x = as_samples(train, "train")
    hs = _check_positive(h_score, "h_score")
    acc = _score_offdiag(x, hs, tile_m=tile_m, tile_n=tile_n, threads=threads, fast=fast)
    # Self term: phi_ii = 1 exactly.
    return ScoreAccumulator(phi_sum=acc[:, 0] + 1.0, weighted_sum=acc[:, 1:] + x)


def score_flash(train, h_score: float, *, tile_m: int = DEFAULT_TILE_M,
                tile_n: int = DEFAULT_TILE_N, threads: Optional[int] = None,
                fast: bool = False) -> np.ndarray:
    """Empirical KDE score at every training point.

    Row ``i`` is ``(T_i - x_i * S_i) / (h^2 * (1 + S_i))`` where ``T = Phi X``
    and ``S`` the row sums of ``Phi``, both taken without the diagonal, which
    contributes exactly ``1`` to the denominator and nothing to the numerator.
    """
    x = as_samples(train, "train")
    hs = _check_positive(h_score, "h_score")
    acc = _score_offdiag(x, hs, tile_m=tile_m, tile_n=tile_n, threads=threads, fast=fast)
    off = acc[:, :1]
    num = acc[:, 1:] - x * off
    num /= (hs * hs) * (1.0 + off)
    return num


def kde_flash(train, queries, h: float, *, kernel: str = "gaussian", fused: bool = True,
              tile_m: int = DEFAULT_TILE_M, tile_n: int = DEFAULT_TILE_N,
              threads: Optional[int] = None, fast: bool = False) -> DensityResult:
    """Blocked KDE of ``train`` at ``queries``.

    ``kernel`` is ``"gaussian"`` or ``"laplace"`` (Laplace-corrected). For the
    Laplace kernel ``fused=True`` applies the affine factor to each
    exponential inside one pass; ``fused=False`` runs a plain Gaussian pass
    and then a second full pass for the correction term.
    """
    x, y = _pair(train, queries)
    h = _check_positive(h, "h")
    n, d = x.shape
    opts = dict(tile_m=tile_m, tile_n=tile_n, threads=threads, fast=fast)
    bufs = _Buffers()
    try:
        if kernel == "gaussian":
            acc = _stream(y, x, 1, _gaussian_visitor(h), scratch=False, bufs=bufs, **opts)
        elif kernel == "laplace":
            if fused:
                acc = _stream(y, x, 1, _affine_visitor(h, 1.0 + 0.5 * d),
                              scratch=True, bufs=bufs, **opts)
            else:
                acc = _stream(y, x, 1, _gaussian_visitor(h), scratch=False, bufs=bufs, **opts)
                acc += _stream(y, x, 1, _affine_visitor(h, 0.5 * d),
                               scratch=True, bufs=bufs, **opts)
        else:
            raise ValueError(f"unknown kernel {kernel!r} (expected 'gaussian' or 'laplace')")
        values = acc[:, 0] * (_gaussian_norm(h, d) / n)
    finally:
        bufs.release()
    return DensityResult(values)


def laplace_flash(train, queries, h: float, *, fused: bool = True, **kw) -> DensityResult:
    return kde_flash(train, queries, h, kernel="laplace", fused=fused, **kw)


def sdkde_flash(train, queries, bw: Bandwidth, *, tile_m: int = DEFAULT_TILE_M,
                tile_n: int = DEFAULT_TILE_N, threads: Optional[int] = None,
                fast: bool = False) -> DensityResult:
    """Score pass, shift by ``(h^2/2) * score``, then a Gaussian KDE pass."""
    x, y = _pair(train, queries)
    opts = dict(tile_m=tile_m, tile_n=tile_n, threads=threads, fast=fast)
    shifted = x + (0.5 * bw.h * bw.h) * score_flash(x, bw.h_score, **opts)
    res = kde_flash(shifted, y, bw.h, kernel="gaussian", **opts)
    res.debiased_samples = shifted
    return res
