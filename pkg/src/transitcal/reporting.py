"""Exit-flow comparison between simulated models and ground-truth AFC data.

Flows are aggregated by origin and exit interval (summed over destinations)
before the root mean square error is taken.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

from .network import format_hms

__all__ = [
    "WindowError",
    "ReportWindow",
    "DEFAULT_WINDOWS",
    "origin_flows",
    "rmse",
    "compare_models",
    "scatter_rows",
    "write_rmse_table",
    "write_scatter",
    "write_recovery_table",
    "write_trace",
]

HOUR = 3600.0


class WindowError(ValueError):
    """A reporting window lies outside the simulated horizon or is not interval-aligned."""


@dataclass(frozen=True)
class ReportWindow:
    name: str
    start: float
    end: float


DEFAULT_WINDOWS = (
    ReportWindow("18:00-18:30", 18 * HOUR, 18.5 * HOUR),
    ReportWindow("18:30-19:00", 18.5 * HOUR, 19 * HOUR),
    ReportWindow("18:00-19:00", 18 * HOUR, 19 * HOUR),
)


def _intervals(window: ReportWindow, tau: float, t0: float) -> range:
    a = (window.start - t0) / tau
    b = (window.end - t0) / tau
    if not (a.is_integer() and b.is_integer()) or b <= a:
        raise WindowError(f"window {window.name} is not a whole number of {tau:g} s intervals from t0")
    return range(int(a), int(b))


def check_window(window: ReportWindow, horizon: tuple[float, float]) -> None:
    if window.start < horizon[0] or window.end > horizon[1]:
        raise WindowError(f"window {window.name} outside simulated horizon "
                          f"{format_hms(horizon[0])}-{format_hms(horizon[1])}")


def origin_flows(records: Iterable, window: ReportWindow, tau: float = 900.0,
                 t0: float = 17 * HOUR) -> Counter:
    """Exits per (origin, interval) for intervals inside ``window``."""
    keep = set(_intervals(window, tau, t0))
    out: Counter = Counter()
    for r in records:
        if r.tap_out is None:
            continue
        t = int(math.floor((r.tap_out - t0) / tau))
        if t in keep:
            out[(r.origin, t)] += 1
    return out


def rmse(model: Mapping, truth: Mapping) -> float:
    """Root mean square difference over the union of keys; missing keys count as 0."""
    keys = set(model) | set(truth)
    if not keys:
        return 0.0
    return math.sqrt(sum((model.get(k, 0) - truth.get(k, 0)) ** 2 for k in keys) / len(keys))


def compare_models(truth: Sequence, models: Mapping[str, Sequence], windows: Sequence[ReportWindow] = DEFAULT_WINDOWS,
                   tau: float = 900.0, t0: float = 17 * HOUR,
                   horizon: tuple[float, float] | None = None) -> list[dict]:
    """RMSE of per-origin exit flows for every model and window.

    ``models`` maps a model name to its simulated passenger records.
    """
    rows = []
    for w in windows:
        if horizon is not None:
            check_window(w, horizon)
        ref = origin_flows(truth, w, tau, t0)
        for name, recs in models.items():
            rows.append({"window": w.name, "model": name, "rmse": rmse(origin_flows(recs, w, tau, t0), ref),
                         "cells": len(set(ref) | set(origin_flows(recs, w, tau, t0)))})
    return rows


def scatter_rows(truth: Sequence, models: Mapping[str, Sequence], window: ReportWindow, tau: float = 900.0,
                 t0: float = 17 * HOUR) -> list[dict]:
    """True against model flow per (origin, interval), one row per model and cell."""
    ref = origin_flows(truth, window, tau, t0)
    rows = []
    for name, recs in models.items():
        mod = origin_flows(recs, window, tau, t0)
        for key in sorted(set(ref) | set(mod)):
            rows.append({"model": name, "origin": key[0], "interval": key[1],
                         "true_flow": ref.get(key, 0), "model_flow": mod.get(key, 0)})
    return rows


def _write(path: str | FsPath, header: Sequence[str], rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rmse_table(rows: Sequence[Mapping], path: str | FsPath) -> None:
    _write(path, ("window", "model", "rmse", "cells"), rows)


def write_scatter(rows: Sequence[Mapping], path: str | FsPath) -> None:
    _write(path, ("model", "origin", "interval", "true_flow", "model_flow"), rows)


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def write_recovery_table(recovered: Mapping[str, float], true: Mapping[str, float] | None,
                         path: str | FsPath) -> None:
    """Recovered coefficients next to the generating ones when those are known."""
    rows = []
    for name, value in recovered.items():
        t = None if true is None else true.get(name)
        rows.append({"parameter": name, "recovered": value, "true": "" if t is None else t,
                     "same_sign": "" if t is None else str(_sign(value) == _sign(t)).lower()})
    _write(path, ("parameter", "recovered", "true", "same_sign"), rows)


def write_trace(rows: Sequence[Mapping], path: str | FsPath) -> None:
    if not rows:
        raise ValueError("empty trace")
    _write(path, tuple(rows[0]), rows)
