"""SVG figures: trajectories, RMSE bars with confidence intervals, RMSE vs. vehicle index.

Output is byte-stable for fixed input: the SVG id salt is fixed and no
date is embedded.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .results import TimeSeries

_RC = {"svg.hashsalt": "platoon-bench", "svg.fonttype": "path", "font.size": 9}
_COLORS = {"lfbk": "#d62728", "dmpc-qp": "#1f77b4", "dmpc-lp": "#2ca02c"}


def _color(controller: str, k: int = 0) -> str:
    return _COLORS.get(controller, f"C{k}")


def _save(fig: Figure, path: Path):
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})


def trajectories(runs: Sequence[tuple[str, TimeSeries]], d_des: float, path: Path):
    """Position (relative to the leader's desired slots) and velocity, one column per run."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(4.0 * len(runs), 5.5), layout="constrained")
        axes = fig.subplots(2, len(runs), squeeze=False, sharex="col")
        for col, (label, ts) in enumerate(runs):
            n = ts.p.shape[1]
            ax_p, ax_v = axes[0, col], axes[1, col]
            for i in range(n):
                kw = {"lw": 1.0, "color": "k" if i == 0 else f"C{(i - 1) % 10}",
                      "label": "leader" if i == 0 else f"vehicle {i}"}
                ax_p.plot(ts.t, ts.p[:, i], **kw)
                ax_v.plot(ts.t, ts.v[:, i], **kw)
            if n <= 6:
                for i in range(1, n):
                    ax_p.plot(ts.t, ts.p[:, 0] - i * d_des, color="0.6", lw=0.6, ls="--")
            ax_p.set_title(label)
            ax_p.set_ylabel("position [m]")
            ax_v.set_ylabel("velocity [m/s]")
            ax_v.set_xlabel("time [s]")
            if n <= 6:
                ax_v.legend(fontsize=7, loc="best")
        _save(fig, path)


def rmse_bars(summaries: Sequence[dict], path: Path):
    """Mean per-vehicle RMSE with 95% confidence bars, grouped by controller."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(7.0, 3.2), layout="constrained")
        axes = fig.subplots(1, 2)
        width = 0.8 / max(len(summaries), 1)
        for ax, key, unit in ((axes[0], "spacing_rmse", "m"), (axes[1], "velocity_rmse", "m/s")):
            for k, s in enumerate(summaries):
                mean = np.array(s[key]["mean"], dtype=float)
                hw = np.array([np.nan if h is None else h for h in s[key]["half_width"]],
                              dtype=float)
                x = np.arange(1, mean.size + 1) + (k - (len(summaries) - 1) / 2) * width
                err = None if np.all(np.isnan(hw)) else np.nan_to_num(hw)
                ax.bar(x, mean, width, yerr=err, capsize=2, color=_color(s["controller"], k),
                       label=s["controller"])
            ax.set_xlabel("vehicle")
            ax.set_ylabel(f"{key.split('_')[0]} RMSE [{unit}]")
            n = len(summaries[0][key]["mean"]) if summaries else 0
            if n <= 20:
                ax.set_xticks(np.arange(1, n + 1))
        axes[0].legend(fontsize=7)
        _save(fig, path)


def scaling(summaries: Sequence[dict], path: Path, zoom_exclude: Sequence[str] = ("lfbk",)):
    """Mean RMSE against vehicle index; the inset zooms on the controllers not excluded."""
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(8.0, 3.4), layout="constrained")
        axes = fig.subplots(1, 2)
        for ax, key, unit in ((axes[0], "spacing_rmse", "m"), (axes[1], "velocity_rmse", "m/s")):
            zoomed = []
            for k, s in enumerate(summaries):
                mean = np.array(s[key]["mean"], dtype=float)
                idx = np.arange(1, mean.size + 1)
                ax.plot(idx, mean, color=_color(s["controller"], k), lw=1.2,
                        label=s["controller"])
                if s["controller"] not in zoom_exclude:
                    zoomed.append((idx, mean, _color(s["controller"], k)))
            ax.set_xlabel("vehicle index")
            ax.set_ylabel(f"mean {key.split('_')[0]} RMSE [{unit}]")
            if zoomed and len(zoomed) < len(summaries):
                ins = ax.inset_axes([0.08, 0.5, 0.45, 0.42])
                for idx, mean, c in zoomed:
                    ins.plot(idx, mean, color=c, lw=1.0)
                top = max(float(np.nanmax(m)) for _, m, _ in zoomed)
                ins.set_ylim(0, 1.1 * top if top > 0 else 1.0)
                ins.tick_params(labelsize=6)
                ins.set_title("zoom", fontsize=7)
        axes[0].legend(fontsize=7, loc="upper right")
        _save(fig, path)
