"""Analytic FLOP / byte / arithmetic-intensity model for the SD-KDE pipeline.

The model counts work for ``k`` training points and ``k/8`` queries: a score
pass (train x train Gram product, ``Phi X`` product, norms and exponentials)
followed by a KDE pass on the debiased samples. One ``exp`` is budgeted at
``exp_cost`` FP32-flop equivalents (8 by default, the ALU:SFU ratio of an
Ampere SM). Bytes follow a per-tile traffic count of 4-byte values.

Hardware specs are small ``key = value`` text files; presets for two RTX A6000
roofs (FP32 SIMT and Tensor Core) ship under ``data/hardware``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Union

__all__ = [
    "Bound",
    "HardwareSpec",
    "PerfModelReport",
    "flops_nd",
    "flops_1d",
    "flops_pipeline",
    "bytes_tile",
    "bytes_nd",
    "bytes_asymptotic",
    "bytes_1d",
    "intensity",
    "intensity_asymptotic",
    "intensity_1d",
    "classify",
    "model_report",
    "utilization",
    "load_hardware",
    "hardware_presets",
]

log = logging.getLogger(__name__)

BYTES_PER_VALUE = 4
DEFAULT_EXP_COST = 8.0


class Bound(str, enum.Enum):
    COMPUTE = "ComputeBound"
    MEMORY = "MemoryBound"


@dataclass(frozen=True)
class HardwareSpec:
    peak_flops: float
    mem_bw: float
    exp_cost: float = DEFAULT_EXP_COST
    name: str = ""

    def __post_init__(self):
        for key in ("peak_flops", "mem_bw", "exp_cost"):
            value = float(getattr(self, key))
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"hardware {key} must be positive, got {value!r}")
            object.__setattr__(self, key, value)

    @property
    def machine_balance(self) -> float:
        return self.peak_flops / self.mem_bw


@dataclass(frozen=True)
class PerfModelReport:
    flops: float
    bytes: float
    intensity: float
    machine_balance: float
    classification: Bound

    def to_dict(self) -> dict:
        out = asdict(self)
        out["classification"] = self.classification.value
        return out


def _count(value, name: str) -> int:
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def flops_pipeline(d: int, n_train: int, n_test: int, exp_cost: float = DEFAULT_EXP_COST) -> float:
    """FLOPs of score + KDE passes for arbitrary train/test sizes.

    Per train-train pair: ``2d`` (Gram) + ``2d`` (``Phi X``) + 4 scalar +
    one exp. Per train-test pair: ``2d`` + 4 scalar + one exp.
    """
    d = _count(d, "d")
    score = (4 * d + 4 + exp_cost) * float(n_train) * n_train
    kde = (2 * d + 4 + exp_cost) * float(n_train) * n_test
    return score + kde


def flops_nd(d: int, k: int) -> float:
    """``(4d + 12 + d/4 + 3/2) k^2`` with ``n_test = k/8`` and an 8-flop exp."""
    d, k = _count(d, "d"), _count(k, "k")
    return (4 * d + 12 + d / 4 + 1.5) * float(k) * k


def flops_1d(k: int, c_score: float = 16.0, c_kde: float = 14.0) -> float:
    """1-D pair-cost model ``c_score k^2 + c_kde k (k/8)``; 17.75 k^2 by default."""
    k = _count(k, "k")
    return c_score * float(k) * k + c_kde * float(k) * k / 8


def bytes_tile(d: int, tile_m: int, tile_n: int) -> float:
    """Traffic of one tile: query block in, train block in, partial pdf and weighted sums out."""
    d, tm, tn = _count(d, "d"), _count(tile_m, "tile_m"), _count(tile_n, "tile_n")
    return float(BYTES_PER_VALUE * (2 * tm * d + tn * d + tm))


def bytes_nd(d: int, k: int, tile_m: int, tile_n: int) -> float:
    """Tile traffic times the tile count; ragged problems round the count up."""
    k = _count(k, "k")
    tiles = math.ceil(k / _count(tile_m, "tile_m")) * math.ceil(k / _count(tile_n, "tile_n"))
    return bytes_tile(d, tile_m, tile_n) * tiles


def bytes_asymptotic(d: int, k: int) -> float:
    """Per-point accounting ``4 (9/8 d k + k/8)``."""
    d, k = _count(d, "d"), _count(k, "k")
    return BYTES_PER_VALUE * (9 / 8 * d * k + k / 8)


def bytes_1d(k: int) -> float:
    """One read per train and test point plus one write per output: about ``5k``."""
    return 5.0 * _count(k, "k")


def intensity(flops: float, nbytes: float) -> float:
    if not nbytes > 0:
        raise ValueError(f"bytes must be positive, got {nbytes!r}")
    return float(flops) / float(nbytes)


def intensity_asymptotic(d: int) -> float:
    """Large-``k`` slope ``C(d) = ((17/4) d + 27/2) / (9d/2)`` of ``I_d(k) ~ C(d) k``."""
    d = _count(d, "d")
    return (17 / 4 * d + 27 / 2) / (9 * d / 2)


def intensity_1d(k: int) -> float:
    return intensity(flops_1d(k), bytes_1d(k))


def classify(flops: float, nbytes: float, hw: HardwareSpec) -> PerfModelReport:
    """Roofline placement; ties (intensity == balance) count as compute bound."""
    ai = intensity(flops, nbytes)
    balance = hw.machine_balance
    bound = Bound.COMPUTE if ai >= balance else Bound.MEMORY
    return PerfModelReport(float(flops), float(nbytes), ai, balance, bound)


def model_report(d: int, k: int, tile_m: int, tile_n: int, hw: HardwareSpec) -> PerfModelReport:
    """Tile-aware model for ``d > 1``; the 1-D point model (``5k`` bytes) for ``d == 1``."""
    if _count(d, "d") == 1:
        return classify(flops_1d(k), bytes_1d(k), hw)
    return classify(flops_nd(d, k), bytes_nd(d, k, tile_m, tile_n), hw)


def utilization(flops: float, runtime_s: float, hw: HardwareSpec) -> float:
    """Achieved fraction of ``hw.peak_flops``. Values above 1 mean the model undercounts."""
    if not runtime_s > 0:
        raise ValueError(f"runtime must be positive, got {runtime_s!r}")
    frac = float(flops) / (runtime_s * hw.peak_flops)
    if frac > 1.0:
        log.warning("utilization %.3g exceeds 1: flop model violated for this measurement", frac)
    return frac


_KEYS = {"peak_flops", "mem_bw", "exp_cost"}


def _parse_hardware(text: str, name: str) -> HardwareSpec:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{name}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"{name}:{lineno}: unknown key {key!r}")
        values[key] = float(value)
    missing = {"peak_flops", "mem_bw"} - values.keys()
    if missing:
        raise ValueError(f"{name}: missing {', '.join(sorted(missing))}")
    return HardwareSpec(name=name, **values)


def hardware_presets() -> list[str]:
    folder = resources.files("flashkde") / "data" / "hardware"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".txt"))


def load_hardware(spec: Union[str, Path]) -> HardwareSpec:
    """Load a preset by name (e.g. ``"a6000-fp32"``) or a ``key = value`` file by path."""
    path = Path(spec)
    if path.is_file():
        return _parse_hardware(path.read_text(), path.stem)
    name = str(spec)
    preset = resources.files("flashkde") / "data" / "hardware" / f"{name}.txt"
    if not preset.is_file():
        raise FileNotFoundError(
            f"no hardware file or preset named {name!r}; presets: {', '.join(hardware_presets())}"
        )
    return _parse_hardware(preset.read_text(), name)
