"""``fkde`` command line front end.

Exit codes: 0 success, 1 comparison outside tolerance or failed bench cell
under ``--strict``, 2 usage, 3 I/O, 4 numeric or dimension error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench, perfmodel
from .core import (
    DEFAULT_TILE_M,
    DEFAULT_TILE_N,
    Bandwidth,
    Engine,
    EstimatorConfig,
    Method,
)
from .estimators import H_RULES, estimate, select_bandwidth
from .fileio import FormatError, read_matrix, write_bytes_atomic, write_matrix, write_values

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("flashkde")


class _IOFailure(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0 or value == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be nonnegative integers")
    return seeds


def _str_list(choices):
    def parse(text: str) -> list[str]:
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"expected a comma list from {sorted(choices)}")
        return items
    return parse


def _threads(args) -> Optional[int]:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FKDE_THREADS")
    if env:
        try:
            return _positive_int(env)
        except argparse.ArgumentTypeError:
            raise _UsageError(f"FKDE_THREADS must be a positive integer, got {env!r}") from None
    return None


class _UsageError(Exception):
    pass


def _read(path: str) -> np.ndarray:
    try:
        return read_matrix(path)
    except (OSError, FormatError, UnicodeDecodeError) as exc:
        raise _IOFailure(f"cannot read {path}: {exc}") from None


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tile-m", type=_positive_int, default=DEFAULT_TILE_M)
    p.add_argument("--tile-n", type=_positive_int, default=DEFAULT_TILE_N)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="engine worker count (default: $FKDE_THREADS, else all cores)")


def cmd_gen(args) -> int:
    try:
        mix = bench.load_mixture(args.config)
    except (OSError, ValueError, KeyError) as exc:
        raise _IOFailure(f"cannot load mixture {args.config}: {exc}") from None
    data = bench.sample_mixture(mix, args.n, args.seed)
    meta = {"n": args.n, "d": mix.d, "seed": args.seed, "mixture": mix.name,
            "mixture_sha256": mix.digest(), "format": args.format}
    try:
        write_matrix(args.out, data, args.format)
        write_bytes_atomic(f"{args.out}.meta.json", (json.dumps(meta, indent=2) + "\n").encode())
    except OSError as exc:
        raise _IOFailure(f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def _bandwidth(args, train: np.ndarray, method: Method) -> Bandwidth:
    if args.h is not None:
        h = args.h
    else:
        rule = args.h_rule or ("silverman" if method is Method.KDE else "sdkde")
        h = select_bandwidth(train, rule, h=args.h, c=args.sdkde_c)
    if args.h_score is not None:
        return Bandwidth(h, args.h_score)
    return Bandwidth.with_score_rule(h, args.h_score_rule)


def cmd_estimate(args) -> int:
    train = _read(args.train)
    queries = _read(args.query)
    if train.shape[1] != queries.shape[1]:
        raise ValueError(f"dimension mismatch: train d={train.shape[1]}, queries d={queries.shape[1]}")
    method = Method(args.method)
    if args.h_rule == "fixed" and args.h is None:
        raise _UsageError("--h-rule fixed needs --h")
    cfg = EstimatorConfig(method, _bandwidth(args, train, method), Engine(args.engine),
                          args.tile_m, args.tile_n, not args.no_fuse, _threads(args), args.fast)
    t0 = time.perf_counter()
    result = estimate(train, queries, cfg)
    wall = time.perf_counter() - t0
    summary = {"n": int(train.shape[0]), "d": int(train.shape[1]), "n_queries": int(queries.shape[0]),
               "method": method.value, "engine": cfg.engine.value,
               "h": cfg.bandwidth.h, "h_score": cfg.bandwidth.h_score,
               "tile_m": cfg.tile_m, "tile_n": cfg.tile_n, "wall_time_s": wall}
    if method is Method.LAPLACE:
        summary["fused"] = cfg.fused
        summary["negative_mass"], summary["negative_mass_se"] = bench.laplace_negative_mass(
            train, cfg.bandwidth.h, args.neg_mass_samples, seed=0,
            tile_m=cfg.tile_m, tile_n=cfg.tile_n, threads=cfg.threads)
        summary["min_value"] = float(result.values.min())
    if not np.all(np.isfinite(result.values)):
        raise FloatingPointError("estimate produced non-finite values")
    try:
        write_values(args.out, result.values, args.format)
    except OSError as exc:
        raise _IOFailure(f"cannot write {args.out}: {exc}") from None
    print(json.dumps(summary))
    return EXIT_OK


def _max_rel_err(a: np.ndarray, b: np.ndarray, norm: str) -> float:
    if norm == "max":
        scale = float(np.max(np.abs(b)))
        return float(np.max(np.abs(a - b))) / scale if scale > 0 else float(np.max(np.abs(a - b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(a - b) / np.abs(b)
    rel[(a == b)] = 0.0
    return float(np.max(rel)) if rel.size else 0.0


def cmd_compare(args) -> int:
    a, b = _read(args.a), _read(args.b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = _max_rel_err(a.ravel(), b.ravel(), args.norm)
    ok = err <= args.rtol
    print(json.dumps({"max_rel_err": err, "rtol": args.rtol, "norm": args.norm, "within": ok}))
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_bench(args) -> int:
    threads = _threads(args)
    out = Path(args.out)
    try:
        mix = bench.load_mixture(args.config) if args.config else None
    except (OSError, ValueError, KeyError) as exc:
        raise _IOFailure(f"cannot load mixture {args.config}: {exc}") from None
    if args.mode == "error":
        mix = mix or bench.load_mixture("gmm1d")
        rows = bench.error_sweep(mix, args.methods or ["kde", "sdkde", "laplace", "laplace-nofuse"],
                                 args.n or [1024, 2048, 4096, 8192, 16384], args.seed,
                                 rule=args.h_rule, h=args.h, sdkde_c=args.sdkde_c,
                                 h_score_rule=args.h_score_rule, mode=args.metric,
                                 n_eval=args.n_eval, engine=args.engines[0] if args.engines else "flash",
                                 tile_m=args.tile_m[0] if args.tile_m else DEFAULT_TILE_M,
                                 tile_n=args.tile_n[0] if args.tile_n else DEFAULT_TILE_N,
                                 threads=threads)
        meta = {"mixture": mix.name, "mixture_sha256": mix.digest(), "seeds": args.seed,
                "h_rule": args.h_rule, "sdkde_c": args.sdkde_c}
    else:
        d = args.d
        if mix is None and d in (1, 16):
            mix = bench.load_mixture("gmm1d" if d == 1 else "gmm16d")
        tiles = [(m, n) for m in (args.tile_m or bench.SWEEP_BLOCK_M)
                 for n in (args.tile_n or bench.SWEEP_BLOCK_N)]
        rows = bench.runtime_sweep(args.methods or ["sdkde"], args.engines or ["flash"],
                                   args.n or [2048, 4096], d, tiles, repeats=args.repeats,
                                   seed=args.seed[0], mix=mix, threads=threads,
                                   sdkde_c=args.sdkde_c)
        try:
            hw = perfmodel.load_hardware(args.hw)
        except (OSError, ValueError) as exc:
            raise _IOFailure(str(exc)) from None
        bench.add_utilization(rows, hw)
        meta = {"mixture": mix.name if mix else "std-normal", "seed": args.seed[0],
                "repeats": args.repeats, "hardware": hw.name, "threads": threads}
    try:
        bench.write_csv(rows, out.with_suffix(".csv"))
        bench.write_json(rows, out.with_suffix(".json"), args.mode, meta)
    except OSError as exc:
        raise _IOFailure(f"cannot write {out}: {exc}") from None
    failed = [r for r in rows if r.error]
    print(json.dumps({"rows": len(rows), "failed": len(failed),
                      "csv": str(out.with_suffix(".csv")), "json": str(out.with_suffix(".json"))}))
    return EXIT_MISMATCH if failed and args.strict else EXIT_OK


def cmd_model(args) -> int:
    try:
        hw = perfmodel.load_hardware(args.hw)
    except (OSError, ValueError) as exc:
        raise _IOFailure(str(exc)) from None
    report = perfmodel.model_report(args.d, args.k, args.tile_m, args.tile_n, hw)
    doc = {"d": args.d, "k": args.k, "n_test": args.k / 8,
           "tile_m": args.tile_m, "tile_n": args.tile_n, "hardware": hw.name,
           "model": "1d" if args.d == 1 else "tile", **report.to_dict()}
    if args.d > 1:
        doc["intensity_asymptotic_slope"] = perfmodel.intensity_asymptotic(args.d)
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        try:
            write_bytes_atomic(args.out, text.encode())
        except OSError as exc:
            raise _IOFailure(f"cannot write {args.out}: {exc}") from None
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fkde", description="Blocked KDE / SD-KDE / Laplace-KDE toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a Gaussian mixture to a file")
    p.add_argument("--config", default="gmm1d", help="mixture JSON path or preset (gmm1d, gmm16d)")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["bin", "csv"], default="bin")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("estimate", help="evaluate a density estimate at query points")
    p.add_argument("--train", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default="sdkde")
    p.add_argument("--engine", choices=[e.value for e in Engine], default="flash")
    p.add_argument("--h", type=_positive_float, default=None, help="fixed evaluation bandwidth")
    p.add_argument("--h-score", type=_positive_float, default=None)
    p.add_argument("--h-rule", choices=H_RULES, default=None,
                   help="default: silverman for kde, sdkde otherwise")
    p.add_argument("--h-score-rule", choices=["same", "half"], default="same",
                   help="h_score = h (same) or h/sqrt(2) (half) when --h-score is not given")
    p.add_argument("--sdkde-c", type=_positive_float, default=None,
                   help="constant of the sdkde rule (default: Silverman prefactor)")
    p.add_argument("--no-fuse", action="store_true", help="two-pass Laplace correction")
    p.add_argument("--fast", action="store_true", help="non-deterministic reduction order")
    p.add_argument("--neg-mass-samples", type=_positive_int, default=4096)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "bin", "json"], default="csv")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", help="compare two value files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--rtol", type=_positive_float, default=1e-8)
    p.add_argument("--norm", choices=["elementwise", "max"], default="elementwise",
                   help="elementwise relative error, or error relative to max|b| (signed data)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="runtime or oracle-error sweeps")
    p.add_argument("mode", choices=["runtime", "error"])
    p.add_argument("--seed", type=_seed_list, required=True, help="seed or comma list of seeds")
    p.add_argument("--methods", type=_str_list(bench.METHOD_SPECS), default=None)
    p.add_argument("--engines", type=_str_list({"naive", "flash"}), default=None)
    p.add_argument("--n", type=_int_list, default=None, help="comma list of n_train")
    p.add_argument("--d", type=_positive_int, default=16, help="dimension (runtime mode)")
    p.add_argument("--tile-m", type=_int_list, default=None)
    p.add_argument("--tile-n", type=_int_list, default=None)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--config", default=None, help="mixture JSON path or preset")
    p.add_argument("--h-rule", choices=("auto",) + H_RULES, default="auto")
    p.add_argument("--h", type=_positive_float, default=None)
    p.add_argument("--h-score-rule", choices=["same", "half"], default="same")
    p.add_argument("--sdkde-c", type=_positive_float, default=bench.BENCH_SDKDE_C)
    p.add_argument("--metric", choices=["grid1d", "mc"], default=None)
    p.add_argument("--n-eval", type=_positive_int, default=None)
    p.add_argument("--hw", default="a6000-tensorcore", help="hardware preset or file for utilization")
    p.add_argument("--threads", type=_positive_int, default=None)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("model", help="FLOP/byte/intensity model and roofline placement")
    p.add_argument("--d", type=_positive_int, required=True)
    p.add_argument("--k", type=_positive_int, required=True, help="n_train (n_test = k/8)")
    p.add_argument("--tile-m", type=_positive_int, default=DEFAULT_TILE_M)
    p.add_argument("--tile-n", type=_positive_int, default=DEFAULT_TILE_N)
    p.add_argument("--hw", default="a6000-fp32", help="hardware preset or key=value file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_model)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except _IOFailure as exc:
        print(f"fkde: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"fkde: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
