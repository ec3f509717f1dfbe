"""Config-driven entry point over the naive and flash estimators."""

from __future__ import annotations

from typing import Optional

from . import engine, oracle
from .core import (
    Bandwidth,
    DensityResult,
    Engine,
    EstimatorConfig,
    Method,
    sdkde_bandwidth,
    silverman_bandwidth,
)

__all__ = ["estimate", "select_bandwidth", "H_RULES"]

H_RULES = ("silverman", "sdkde", "fixed")


def select_bandwidth(train, rule: str, *, h: Optional[float] = None,
                     c: Optional[float] = None) -> float:
    """Evaluation bandwidth from ``rule``: ``silverman``, ``sdkde`` or ``fixed`` (uses ``h``)."""
    if rule == "silverman":
        return silverman_bandwidth(train)
    if rule == "sdkde":
        return sdkde_bandwidth(train, c)
    if rule == "fixed":
        if h is None:
            raise ValueError("the 'fixed' bandwidth rule needs an explicit h")
        return float(h)
    raise ValueError(f"unknown bandwidth rule {rule!r}; expected one of {H_RULES}")


def estimate(train, queries, config: EstimatorConfig) -> DensityResult:
    bw: Bandwidth = config.bandwidth
    if config.engine is Engine.NAIVE:
        if config.method is Method.KDE:
            return oracle.kde_naive(train, queries, bw.h)
        if config.method is Method.SDKDE:
            return oracle.sdkde_naive(train, queries, bw)
        return oracle.laplace_naive(train, queries, bw.h)

    opts = dict(tile_m=config.tile_m, tile_n=config.tile_n, threads=config.threads,
                fast=config.fast)
    if config.method is Method.KDE:
        return engine.kde_flash(train, queries, bw.h, kernel="gaussian", **opts)
    if config.method is Method.SDKDE:
        return engine.sdkde_flash(train, queries, bw, **opts)
    return engine.kde_flash(train, queries, bw.h, kernel="laplace", fused=config.fused, **opts)
