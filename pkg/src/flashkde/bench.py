"""Synthetic benchmarks: mixture data, oracle error metrics and sweeps.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed,
spawn_key=...)``. Each use gets its own stream key, so e.g. the training set
for ``(seed, n)`` is the same for every method and independent of the
evaluation points drawn for Monte Carlo error estimates.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import perfmodel
from .core import (
    DEFAULT_TILE_M,
    DEFAULT_TILE_N,
    Bandwidth,
    Engine,
    EstimatorConfig,
    Method,
    as_samples,
)
from .engine import kde_flash
from .estimators import estimate, select_bandwidth

__all__ = [
    "GaussianMixture",
    "ErrorMode",
    "ErrorReport",
    "EstimateError",
    "RuntimeRow",
    "METHOD_SPECS",
    "BENCH_SDKDE_C",
    "SWEEP_BLOCK_M",
    "SWEEP_BLOCK_N",
    "rng_stream",
    "load_mixture",
    "sample_mixture",
    "mixture_pdf",
    "error_metrics",
    "error_sweep",
    "runtime_sweep",
    "add_utilization",
    "laplace_negative_mass",
    "write_csv",
    "write_json",
    "loglog_slope",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Rule constant for the n^(-1/(d+8)) bandwidth in benchmark sweeps. The
# Silverman prefactor default badly oversmooths multimodal mixtures here.
BENCH_SDKDE_C = 0.4

SWEEP_BLOCK_M = (32, 64, 128, 256)
SWEEP_BLOCK_N = (32, 64, 128, 256, 512, 1024)

# label -> (method, fused, default bandwidth rule)
METHOD_SPECS = {
    "kde": (Method.KDE, True, "silverman"),
    "sdkde": (Method.SDKDE, True, "sdkde"),
    "laplace": (Method.LAPLACE, True, "sdkde"),
    "laplace-nofuse": (Method.LAPLACE, False, "sdkde"),
}


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# Stream keys.
_TRAIN, _EVAL, _QUERY, _NEGMASS = 1, 2, 3, 4


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    name: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        s = np.asarray(self.sigmas, dtype=np.float64).ravel()
        if not (len(w) == len(mu) == len(s) >= 1):
            raise ValueError("weights, means and sigmas must have one entry per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(~(s > 0)) or not np.all(np.isfinite(mu)):
            raise ValueError("mixture sigmas must be positive and means finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "sigmas", s)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {"version": SCHEMA_VERSION, "name": self.name, "weights": self.weights.tolist(),
                "means": self.means.tolist(), "sigmas": self.sigmas.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(data["weights"], data["means"], data["sigmas"], data.get("name", ""))

    def digest(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k != "name"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def load_mixture(spec: Union[str, Path]) -> GaussianMixture:
    """Load a mixture from a JSON file, or a shipped preset (``gmm1d``, ``gmm16d``)."""
    path = Path(spec)
    if path.is_file():
        text = path.read_text()
    else:
        preset = resources.files("flashkde") / "data" / "mixtures" / f"{spec}.json"
        if not preset.is_file():
            raise FileNotFoundError(f"no mixture file or preset named {str(spec)!r}")
        text = preset.read_text()
    data = json.loads(text)
    if data.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ValueError(f"unsupported mixture config version {data['version']!r}")
    return GaussianMixture.from_dict(data)


def sample_mixture(mix: GaussianMixture, n: int, seed: int, *key: int) -> np.ndarray:
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    rng = rng_stream(seed, *(key or (_TRAIN,)))
    comp = rng.choice(len(mix.weights), size=int(n), p=mix.weights)
    z = rng.standard_normal((int(n), mix.d))
    return mix.means[comp] + mix.sigmas[comp, None] * z


def mixture_pdf(mix: GaussianMixture, points) -> np.ndarray:
    y = as_samples(points, "points")
    if y.shape[1] != mix.d:
        raise ValueError(f"dimension mismatch: mixture d={mix.d}, points d={y.shape[1]}")
    d = mix.d
    out = np.zeros(y.shape[0])
    for w, mu, s in zip(mix.weights, mix.means, mix.sigmas):
        if w == 0:
            continue
        diff = y - mu
        r2 = np.einsum("ij,ij->i", diff, diff)
        out += w * (2 * math.pi * s * s) ** (-0.5 * d) * np.exp(-0.5 * r2 / (s * s))
    return out


class ErrorMode(str, enum.Enum):
    GRID_1D = "grid1d"
    IMPORTANCE_MC = "mc"


class EstimateError(FloatingPointError):
    def __init__(self, method: str, detail: str):
        super().__init__(f"[{method}] {detail}")
        self.method = method


@dataclass
class ErrorReport:
    method: str
    n_train: int
    seed: int
    mode: str
    mise: float
    miae: float
    negative_mass: float
    mise_se: Optional[float] = None
    miae_se: Optional[float] = None
    negative_mass_se: Optional[float] = None
    h: Optional[float] = None
    h_score: Optional[float] = None
    d: Optional[int] = None
    n_eval: Optional[int] = None
    error: str = ""


def _grid(mix: GaussianMixture, n_eval: int) -> np.ndarray:
    pad = 6.0 * mix.sigmas.max()
    return np.linspace(mix.means.min() - pad, mix.means.max() + pad, int(n_eval))


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def error_metrics(estimate_at: Callable[[np.ndarray], np.ndarray], mix: GaussianMixture,
                  mode: Union[ErrorMode, str] = ErrorMode.GRID_1D, n_eval: int = 4001,
                  seed: int = 0, *, method: str = "", n_train: int = 0) -> ErrorReport:
    """MISE, MIAE and negative mass of a signed density estimate against ``mix``.

    ``grid1d`` integrates with the trapezoid rule over the mixture support
    padded by six component sigmas (``d == 1`` only). ``mc`` importance
    samples ``z ~ p`` and averages ``(p_hat - p)^2 / p`` etc., attaching
    standard errors.
    """
    mode = ErrorMode(mode)
    if mode is ErrorMode.GRID_1D:
        if mix.d != 1:
            raise ValueError("grid1d error metrics need a 1-D mixture")
        pts = _grid(mix, n_eval)[:, None]
    else:
        pts = sample_mixture(mix, n_eval, seed, _EVAL, int(n_train))
    est = np.asarray(estimate_at(pts), dtype=np.float64).ravel()
    if est.shape[0] != pts.shape[0] or not np.all(np.isfinite(est)):
        raise EstimateError(method or "estimate", "non-finite or mis-shaped density values")
    p = mixture_pdf(mix, pts)
    diff = est - p
    neg = np.maximum(0.0, -est)
    report = ErrorReport(method=method, n_train=int(n_train), seed=int(seed), mode=mode.value,
                         mise=0.0, miae=0.0, negative_mass=0.0, d=mix.d, n_eval=int(n_eval))
    if mode is ErrorMode.GRID_1D:
        x = pts[:, 0]
        report.mise = float(np.trapezoid(diff * diff, x))
        report.miae = float(np.trapezoid(np.abs(diff), x))
        report.negative_mass = float(np.trapezoid(neg, x))
    else:
        report.mise, report.mise_se = _mean_se(diff * diff / p)
        report.miae, report.miae_se = _mean_se(np.abs(diff) / p)
        report.negative_mass, report.negative_mass_se = _mean_se(neg / p)
    return report


def _config_for(label: str, train: np.ndarray, *, rule: str, h: Optional[float],
                sdkde_c: Optional[float], h_score_rule: str, engine: Engine,
                tile_m: int, tile_n: int, threads: Optional[int]) -> EstimatorConfig:
    method, fused, default_rule = METHOD_SPECS[label]
    hh = select_bandwidth(train, default_rule if rule == "auto" else rule, h=h, c=sdkde_c)
    return EstimatorConfig(method, Bandwidth.with_score_rule(hh, h_score_rule), engine,
                           tile_m, tile_n, fused, threads)


def error_sweep(mix: GaussianMixture, methods: Sequence[str], n_grid: Iterable[int],
                seeds: Iterable[int], *, rule: str = "auto", h: Optional[float] = None,
                sdkde_c: Optional[float] = BENCH_SDKDE_C, h_score_rule: str = "same",
                mode: Optional[Union[ErrorMode, str]] = None, n_eval: Optional[int] = None,
                engine: Union[Engine, str] = Engine.FLASH, tile_m: int = DEFAULT_TILE_M,
                tile_n: int = DEFAULT_TILE_N, threads: Optional[int] = None) -> list[ErrorReport]:
    """One :class:`ErrorReport` per ``(method, n_train, seed)``, in that order.

    ``rule="auto"`` uses Silverman for KDE and the ``n^(-1/(d+8))`` rule with
    constant ``sdkde_c`` for SD-KDE and the Laplace-corrected estimators.
    A failing cell is recorded with NaN metrics and its ``error`` text.
    """
    for label in methods:
        if label not in METHOD_SPECS:
            raise ValueError(f"unknown method {label!r}; expected one of {sorted(METHOD_SPECS)}")
    mode = ErrorMode(mode or (ErrorMode.GRID_1D if mix.d == 1 else ErrorMode.IMPORTANCE_MC))
    if n_eval is None:
        n_eval = 4001 if mode is ErrorMode.GRID_1D else 20000
    engine = Engine(engine)
    n_grid, seeds = [int(n) for n in n_grid], [int(s) for s in seeds]
    cells: dict[tuple[str, int, int], ErrorReport] = {}
    for n in n_grid:
        for seed in seeds:
            train = sample_mixture(mix, n, seed, _TRAIN, n)
            for label in methods:
                try:
                    cfg = _config_for(label, train, rule=rule, h=h, sdkde_c=sdkde_c,
                                      h_score_rule=h_score_rule, engine=engine,
                                      tile_m=tile_m, tile_n=tile_n, threads=threads)
                    rep = error_metrics(lambda q: estimate(train, q, cfg).values, mix, mode,
                                        n_eval, seed, method=label, n_train=n)
                    rep.h, rep.h_score = cfg.bandwidth.h, cfg.bandwidth.h_score
                except Exception as exc:  # noqa: BLE001 - recorded per cell
                    log.warning("error sweep cell (%s, n=%d, seed=%d) failed: %s", label, n, seed, exc)
                    nan = float("nan")
                    rep = ErrorReport(label, n, seed, mode.value, nan, nan, nan, d=mix.d,
                                      n_eval=n_eval, error=f"{type(exc).__name__}: {exc}")
                cells[(label, n, seed)] = rep
    return [cells[(label, n, s)] for label in methods for n in n_grid for s in seeds]


PROPOSAL_WIDTH = 2.0


def laplace_negative_mass(train, h: float, n_samples: int = 4096, seed: int = 0,
                          **engine_opts) -> tuple[float, float]:
    """Monte Carlo ``integral max(0, -p_LC)`` and its standard error, no ground truth needed.

    Proposal points come from the Gaussian KDE of ``train`` at bandwidth
    ``2h`` (a random training point plus ``2h`` times a standard normal
    draw), weighted by the inverse proposal density. The widened kernel
    reaches the region beyond ``sqrt(2 + d) h`` of the samples where the
    corrected kernel is negative.
    """
    x = as_samples(train, "train")
    h = float(h)
    rng = rng_stream(seed, _NEGMASS)
    idx = rng.integers(0, x.shape[0], size=int(n_samples))
    z = x[idx] + PROPOSAL_WIDTH * h * rng.standard_normal((int(n_samples), x.shape[1]))
    signed = kde_flash(x, z, h, kernel="laplace", **engine_opts).values
    proposal = kde_flash(x, z, PROPOSAL_WIDTH * h, kernel="gaussian", **engine_opts).values
    return _mean_se(np.maximum(0.0, -signed) / proposal)


@dataclass
class RuntimeRow:
    method: str
    engine: str
    n_train: int
    n_test: int
    d: int
    tile_m: Optional[int]
    tile_n: Optional[int]
    repeats: int
    seconds: float
    flops_model: float
    utilization: Optional[float] = None
    error: str = ""


def _flops_for(label: str, d: int, n_train: int, n_test: int) -> float:
    method = METHOD_SPECS[label][0]
    exp_cost = perfmodel.DEFAULT_EXP_COST
    if method is Method.SDKDE:
        return perfmodel.flops_pipeline(d, n_train, n_test, exp_cost)
    # One Gram product plus norms/exp per train-query pair; the Laplace factor
    # adds 2 flops per pair.
    extra = 2.0 if method is Method.LAPLACE else 0.0
    return (2 * d + 4 + exp_cost + extra) * float(n_train) * n_test


def runtime_sweep(methods: Sequence[str], engines: Sequence[Union[Engine, str]],
                  n_grid: Iterable[int], d: int, tiles: Iterable[tuple[int, int]], *,
                  repeats: int = 3, seed: int = 0, mix: Optional[GaussianMixture] = None,
                  threads: Optional[int] = None, sdkde_c: Optional[float] = BENCH_SDKDE_C,
                  clock: Callable[[], float] = time.perf_counter) -> list[RuntimeRow]:
    """Median-of-``repeats`` wall time per cell after one warm-up call.

    ``n_test = n_train // 8``. The naive engine ignores tiles and gets one
    row per ``(method, n)`` with empty tile columns. Timing covers bandwidth
    selection and estimation, not data generation.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    tiles = [(int(a), int(b)) for a, b in tiles]
    if mix is None:
        mix = GaussianMixture([1.0], np.zeros((1, d)), [1.0], "std-normal")
    if mix.d != d:
        raise ValueError(f"mixture has d={mix.d}, sweep asks for d={d}")
    rows = []
    for n in (int(n) for n in n_grid):
        m = max(1, n // 8)
        train = sample_mixture(mix, n, seed, _TRAIN, n)
        queries = sample_mixture(mix, m, seed, _QUERY, n)
        for label in methods:
            for eng in (Engine(e) for e in engines):
                plan = tiles if eng is Engine.FLASH else [(None, None)]
                for tm, tn in plan:
                    row = RuntimeRow(label, eng.value, n, m, d, tm, tn, int(repeats),
                                     float("nan"), _flops_for(label, d, n, m))

                    def run():
                        cfg = _config_for(label, train, rule="auto", h=None, sdkde_c=sdkde_c,
                                          h_score_rule="same", engine=eng,
                                          tile_m=tm or DEFAULT_TILE_M,
                                          tile_n=tn or DEFAULT_TILE_N, threads=threads)
                        return estimate(train, queries, cfg)

                    try:
                        run()
                        times = []
                        for _ in range(repeats):
                            t0 = clock()
                            run()
                            times.append(clock() - t0)
                        row.seconds = float(statistics.median(times))
                    except Exception as exc:  # noqa: BLE001 - recorded per cell
                        log.warning("runtime cell (%s, %s, n=%d) failed: %s", label, eng.value, n, exc)
                        row.error = f"{type(exc).__name__}: {exc}"
                    rows.append(row)
    return rows


def add_utilization(rows: Sequence[RuntimeRow], hw: perfmodel.HardwareSpec) -> list[RuntimeRow]:
    for row in rows:
        if row.seconds > 0:
            row.utilization = perfmodel.utilization(row.flops_model, row.seconds, hw)
    return list(rows)


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ns)``."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(values, float)), 1)[0])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: Sequence, path: Union[str, Path]) -> None:
    """One row per report; columns in dataclass field order."""
    if not rows:
        raise ValueError("nothing to write")
    names = [f.name for f in fields(rows[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([_fmt(getattr(row, k)) for k in names])


def write_json(rows: Sequence, path: Union[str, Path], kind: str, meta: Optional[dict] = None) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "meta": meta or {},
           "rows": [asdict(r) for r in rows]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False, allow_nan=True)
        fh.write("\n")
