"""Measured or computed variances next to their asymptotic predictions."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from fep1d.correlations import exact_variances
from fep1d.dynamics import PARALLEL_TA, simulate_ensemble
from fep1d.estimators import predict_variance, stats_from_arrays
from fep1d.renewal import sample_window_batch
from fep1d.streams import stream

ROUTES = ("exact-series", "exact-sampler", "dynamics")
COLUMNS = ("delta", "L", "parity", "route", "variance", "stderr", "predicted", "ratio", "regime", "status")

MAX_SERIES_L = 4_000_001
MAX_SAMPLER_L = 100_000
MIN_SAMPLER_DELTA = 1e-4


def parse_l_grid(text: str, default_points: int = 25) -> list[int]:
    """``"11,21,41"`` or ``"parity:start:stop[:points]"`` with log spacing.

    ``parity`` is ``odd``, ``even`` or ``all``; points are snapped to the
    parity and deduplicated.
    """
    text = text.strip()
    if ":" not in text:
        return sorted({int(v) for v in text.split(",") if v.strip()})
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ValueError(f"bad L grid {text!r}")
    parity, lo, hi = parts[0], int(parts[1]), int(parts[2])
    points = int(parts[3]) if len(parts) == 4 else default_points
    if parity not in ("odd", "even", "all") or lo < 1 or hi < lo:
        raise ValueError(f"bad L grid {text!r}")
    raw = np.unique(np.round(np.geomspace(lo, hi, points)).astype(np.int64))
    out = set()
    for v in raw.tolist():
        if parity == "odd" and v % 2 == 0:
            v = v + 1 if v + 1 <= hi else v - 1
        elif parity == "even" and v % 2 == 1:
            v = v + 1 if v + 1 <= hi else v - 1
        if lo <= v <= hi:
            out.add(v)
    return sorted(out)


def _row(delta, L, route, variance, stderr, status="ok") -> dict:
    pred = predict_variance(delta, L)
    ratio = variance / pred.predicted_variance if pred.predicted_variance > 0 else math.nan
    return {
        "delta": delta, "L": L, "parity": pred.parity, "route": route,
        "variance": variance, "stderr": stderr, "predicted": pred.predicted_variance,
        "ratio": ratio, "regime": pred.regime, "status": status,
    }


def _failed(delta, L, route, why) -> dict:
    return _row(delta, L, route, math.nan, math.nan, status=f"infeasible: {why}")


def regime_report(delta: float, L_grid: Sequence[int], route: str = "exact-series", *,
                  samples: int = 100_000, seed: int = 0, ring_size: int = 2**20,
                  replicas: int = 10, rule: str = PARALLEL_TA, stride: Optional[int] = None,
                  workers: int = 1) -> list[dict]:
    """One row per ``L``; infeasible rows carry ``status`` and NaN values."""
    if route not in ROUTES:
        raise ValueError(f"unknown route {route!r}")
    Ls = [int(v) for v in L_grid]
    rows = []
    if route == "exact-series":
        ok = [L for L in Ls if L <= MAX_SERIES_L]
        values = dict(zip(ok, exact_variances(delta, ok))) if ok else {}
        for L in Ls:
            if L in values:
                rows.append(_row(delta, L, route, float(values[L]), 0.0))
            else:
                rows.append(_failed(delta, L, route, f"L > {MAX_SERIES_L}"))
        return rows

    if route == "exact-sampler":
        for i, L in enumerate(Ls):
            if 0 < delta < MIN_SAMPLER_DELTA:
                rows.append(_failed(delta, L, route, "delta too small for exact sampling"))
                continue
            if L > MAX_SAMPLER_L:
                rows.append(_failed(delta, L, route, f"L > {MAX_SAMPLER_L}"))
                continue
            batch = sample_window_batch(delta, L, samples, stream(seed, i))
            st = stats_from_arrays(delta, L, batch.N, batch.N_ren, batch.sigma)
            rows.append(_row(delta, L, route, st.var_N, st.var_N_stderr))
        return rows

    # dynamics
    if delta <= 0.0:
        return [_failed(delta, L, route, "delta = 0 does not freeze on a ring") for L in Ls]
    ens = simulate_ensemble(ring_size, 0.5 - delta, rule, replicas, seed, workers=workers)
    for L in Ls:
        if L > ring_size // 100:
            rows.append(_failed(delta, L, route, "L > ring_size/100"))
            continue
        (N, R, S, _), sizes = ens.windows(L, stride)
        st = stats_from_arrays(delta, L, N, R, S, block_sizes=sizes)
        rows.append(_row(delta, L, route, st.var_N, st.variance_stderr))
    return rows
