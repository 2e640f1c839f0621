"""Tracking errors, RMSE aggregation and platoon-size trend analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

Z_95 = 1.96


@dataclass(frozen=True)
class ErrorSeries:
    """Spacing and velocity errors, shape ``(steps, followers)``.

    Column ``j`` belongs to follower ``j + 1``.
    """

    spacing: np.ndarray
    velocity: np.ndarray

    @classmethod
    def from_states(cls, p, v, d_des: float) -> ErrorSeries:
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if p.shape != v.shape or p.ndim != 2 or p.shape[1] < 2:
            raise ValueError("expected (steps, vehicles) arrays with at least one follower")
        return cls(p[:, 1:] - p[:, :-1] + d_des, v[:, 1:] - v[:, :-1])

    @classmethod
    def from_telemetry(cls, tel) -> ErrorSeries:
        return cls.from_states(tel.p, tel.v, tel.scenario.platoon.d_des)

    @property
    def n_steps(self) -> int:
        return self.spacing.shape[0]

    def rmse(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-follower (spacing, velocity) RMSE over the whole run."""
        return rmse(self.spacing, axis=0), rmse(self.velocity, axis=0)


def rmse(series, axis=None):
    """Root mean square of ``series``; empty input is rejected."""
    a = np.asarray(series, dtype=float)
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise ValueError("rmse of an empty series")
    return np.sqrt(np.mean(np.square(a), axis=axis))


def confidence_interval_95(samples) -> tuple[float, float]:
    """``(mean, half_width)`` with the normal quantile 1.96."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("a confidence interval needs at least 2 samples")
    return float(x.mean()), float(Z_95 * x.std(ddof=1) / np.sqrt(x.size))


@dataclass(frozen=True)
class SummaryStats:
    """Per-follower statistics of one RMSE quantity across trials.

    With a single trial ``std`` and ``half_width`` are NaN.
    """

    mean: np.ndarray
    std: np.ndarray
    half_width: np.ndarray
    n_trials: int

    @classmethod
    def from_trials(cls, per_trial) -> SummaryStats:
        """``per_trial`` has shape ``(trials, followers)``."""
        a = np.atleast_2d(np.asarray(per_trial, dtype=float))
        n = a.shape[0]
        if n == 0:
            raise ValueError("no trials")
        if n == 1:
            nan = np.full(a.shape[1], np.nan)
            return cls(a[0].copy(), nan, nan.copy(), 1)
        std = a.std(axis=0, ddof=1)
        return cls(a.mean(axis=0), std, Z_95 * std / np.sqrt(n), n)


@dataclass(frozen=True)
class TrendFit:
    """Quadratic fit ``a + b*i + c*i**2`` of RMSE against vehicle index."""

    coefficients: tuple[float, float, float]
    stderr: tuple[float, float, float]
    t_stat_c: float
    significant: bool
    divergent: bool
    residual_norm: float
    degenerate: bool = False
    message: str = ""


def scaling_trend(per_vehicle_rmse: Sequence[float], indices=None,
                  alpha: float = 0.05) -> TrendFit:
    """Fit the growth of RMSE along the platoon.

    ``indices`` default to 1..N. ``divergent`` is set when the last vehicle's
    RMSE exceeds ten times that of vehicle 5. ``significant`` means a
    positive quadratic coefficient whose two-sided t-test rejects zero at
    level ``alpha``. Fits that cannot be assessed are flagged ``degenerate``
    instead of raising.
    """
    y = np.asarray(per_vehicle_rmse, dtype=float)
    if y.ndim != 1 or y.size < 5:
        raise ValueError("scaling_trend needs at least 5 vehicles")
    i = np.arange(1, y.size + 1, dtype=float) if indices is None else np.asarray(indices, float)
    if i.shape != y.shape:
        raise ValueError("indices and RMSE values differ in length")
    nan3 = (np.nan, np.nan, np.nan)
    if not np.all(np.isfinite(y)):
        return TrendFit(nan3, nan3, np.nan, False, False, np.nan, True, "non-finite RMSE values")

    X = np.column_stack([np.ones_like(i), i, i * i])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    res_norm = float(np.linalg.norm(resid))
    k5 = int(np.flatnonzero(i == 5)[0]) if np.any(i == 5) else 4
    divergent = bool(y[-1] > 10.0 * y[k5])
    dof = y.size - 3
    if rank < 3:
        return TrendFit(tuple(coef), nan3, np.nan, False, divergent, res_norm, True,
                        "vehicle indices do not determine a quadratic")
    if dof == 0:
        return TrendFit(tuple(coef), nan3, np.nan, False, divergent, res_norm, True,
                        "no residual degrees of freedom")
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if se[2] == 0:
        # exact fit: the sign of c is certain
        t_c = np.inf if coef[2] > 0 else (-np.inf if coef[2] < 0 else 0.0)
    else:
        t_c = coef[2] / se[2]
    significant = bool(coef[2] > 0 and t_c > stats.t.ppf(1 - alpha / 2, dof))
    return TrendFit(tuple(float(c) for c in coef), tuple(float(s) for s in se), float(t_c),
                    significant, divergent, res_norm)
