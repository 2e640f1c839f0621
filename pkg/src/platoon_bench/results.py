"""Result files, schema version 1.

Time-series CSV (one file per trial)
    columns ``t,i,p,v,u,gap_measured,solver_status``; one row per step and
    vehicle, ordered by step then vehicle; floats written with 17
    significant digits so they read back bit-for-bit. ``gap_measured`` is
    ``nan`` for the leader; ``solver_status`` is one of ``none``, ``solved``,
    ``max_iter``, ``primal_infeasible``, ``dual_infeasible``.

Summary JSON
    per-follower RMSE statistics across trials (mean, std, 95% half-width
    with the normal quantile), the per-trial RMSE values, solver counts, and
    every fallback as ``[trial, step, vehicle, status]``. NaN is written as
    ``null``.

Manifest JSON
    written before any result file; records the scenario hash, controller,
    seeds and output paths so a run can be repeated exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .metrics import Z_95, ErrorSeries, SummaryStats, scaling_trend
from .sim import STATUS_NAMES, Telemetry

SCHEMA_VERSION = 1
CSV_COLUMNS = ("t", "i", "p", "v", "u", "gap_measured", "solver_status")
_STATUS_CODE = {name: code for code, name in STATUS_NAMES.items()}


def _f(x: float) -> str:
    return "%.17g" % x


def trial_csv_name(k: int) -> str:
    return f"trial_{k:03d}.csv"


def telemetry_csv(tel: Telemetry) -> str:
    """Serialize one trial as CSV text."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    T, n = tel.p.shape
    for k in range(T):
        t = _f(tel.t[k])
        for i in range(n):
            buf.write(f"{t},{i},{_f(tel.p[k, i])},{_f(tel.v[k, i])},{_f(tel.u[k, i])},"
                      f"{_f(tel.gap[k, i])},{STATUS_NAMES[int(tel.status[k, i])]}\n")
    return buf.getvalue()


class TimeSeries:
    """Arrays read back from a time-series CSV, shape ``(steps, vehicles)``."""

    def __init__(self, t, p, v, u, gap, status):
        self.t, self.p, self.v, self.u, self.gap, self.status = t, p, v, u, gap, status


def read_timeseries(path) -> TimeSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: not a schema-{SCHEMA_VERSION} time-series CSV")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    idx = np.array([int(r[1]) for r in rows])
    n = int(idx.max()) + 1
    if len(rows) % n or np.any(idx != np.tile(np.arange(n), len(rows) // n)):
        raise ValueError(f"{path}: rows are not ordered by step then vehicle")
    num = np.array([[float(r[0]), float(r[2]), float(r[3]), float(r[4]), float(r[5])]
                    for r in rows]).reshape(-1, n, 5)
    status = np.array([_STATUS_CODE[r[6]] for r in rows], dtype=np.int8).reshape(-1, n)
    return TimeSeries(num[:, 0, 0], num[..., 1], num[..., 2], num[..., 3], num[..., 4], status)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) else x
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, NaN as null, no infinities)."""
    return json.dumps(_json_ready(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _stats_dict(s: SummaryStats) -> dict:
    return {"mean": s.mean, "std": s.std, "half_width": s.half_width}


def _trend_dict(fit) -> dict:
    return {"coefficients": list(fit.coefficients), "stderr": list(fit.stderr),
            "t_stat_c": fit.t_stat_c, "significant": fit.significant,
            "divergent": fit.divergent, "degenerate": fit.degenerate, "message": fit.message}


def build_summary(spacing: np.ndarray, velocity: np.ndarray, *, scenario: str, controller: str,
                  seeds: Sequence[int], status: Sequence[np.ndarray]) -> dict:
    """Summary from per-trial RMSE arrays ``(trials, followers)`` and status grids."""
    sp_stats = SummaryStats.from_trials(spacing)
    vel_stats = SummaryStats.from_trials(velocity)
    fallbacks = []
    n_solves = 0
    for k, st in enumerate(status):
        n_solves += int(np.count_nonzero(st))
        for step, vehicle in zip(*np.nonzero(st > _STATUS_CODE["solved"])):
            fallbacks.append([k, int(step), int(vehicle), STATUS_NAMES[int(st[step, vehicle])]])
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario,
        "controller": controller,
        "n_followers": int(spacing.shape[1]),
        "trials": int(spacing.shape[0]),
        "seeds": [int(s) for s in seeds],
        "confidence_interval": {"level": 0.95, "method": "normal", "quantile": Z_95},
        "spacing_rmse": _stats_dict(sp_stats),
        "velocity_rmse": _stats_dict(vel_stats),
        "per_trial": {"spacing_rmse": spacing, "velocity_rmse": velocity},
        "solver": {"solves": n_solves, "fallbacks": len(fallbacks),
                   "fallback_events": fallbacks},
    }
    if spacing.shape[1] >= 5:
        out["scaling_trend"] = {"spacing": _trend_dict(scaling_trend(sp_stats.mean)),
                                "velocity": _trend_dict(scaling_trend(vel_stats.mean))}
    return out


def summarize_telemetry(tels: Sequence[Telemetry]) -> dict:
    rm = [ErrorSeries.from_telemetry(t).rmse() for t in tels]
    sc = tels[0].scenario
    return build_summary(np.array([r[0] for r in rm]), np.array([r[1] for r in rm]),
                         scenario=sc.name, controller=sc.controller,
                         seeds=[t.seed for t in tels], status=[t.status for t in tels])


def summarize_csv(paths: Sequence, d_des: float, *, scenario: str, controller: str,
                  seeds: Sequence[int]) -> dict:
    """Recompute a summary from time-series CSV files."""
    series = [read_timeseries(p) for p in paths]
    rm = [ErrorSeries.from_states(s.p, s.v, d_des).rmse() for s in series]
    return build_summary(np.array([r[0] for r in rm]), np.array([r[1] for r in rm]),
                         scenario=scenario, controller=controller, seeds=seeds,
                         status=[s.status for s in series])


def now_utc() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_text_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def make_manifest(*, scenario_path: str, scenario_hash: str, scenario_echo: dict,
                  controller: str, base_seed: int, trials: int, seeds: Sequence[int],
                  outputs: Iterable[str], command: Sequence[str],
                  extra: Optional[dict] = None) -> dict:
    m = {
        "schema_version": SCHEMA_VERSION,
        "tool": "platoon-bench",
        "tool_version": __version__,
        "scenario_path": scenario_path,
        "scenario_hash": scenario_hash,
        "scenario": scenario_echo,
        "controller": controller,
        "base_seed": int(base_seed),
        "trials": int(trials),
        "seeds": [int(s) for s in seeds],
        "outputs": list(outputs),
        "command": list(command),
        "started": now_utc(),
        "finished": None,
        "status": "running",
    }
    if extra:
        m.update(extra)
    return m
