"""Operator-splitting (ADMM) iterations in the OSQP form.

Each iteration solves one quasi-definite linear system with a cached
factorization, projects onto the constraint box and takes a dual ascent
step. Once the iterates settle on an active set, a direct solve of the
reduced KKT system (polishing) recovers a high-accuracy solution.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .kkt import (Factor, ProblemData, SolverSettings, active_set, finish, inf_norm, polish)
from .problem import QpSolution, Status

_RHO_EQ_SCALE = 1e3
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_DIV_TOL = 1e-12


class AdmmState:
    """Iterates plus the factorization of ``P + sigma I + A' diag(rho) A``."""

    def __init__(self, data: ProblemData, settings: SolverSettings):
        self.settings = settings
        self.x = np.zeros(data.prob.n)
        self.z = np.zeros(data.prob.m)
        self.y = np.zeros(data.prob.m)
        self.rho = settings.rho
        self._factor = None
        self._key = None
        self.n_factorizations = 0

    def reset_matrices(self):
        self._factor = None
        self._key = None
        self.rho = self.settings.rho

    def set_rho(self, data: ProblemData, rho: float):
        rho = float(np.clip(rho, _RHO_MIN, _RHO_MAX))
        vec = np.full(data.prob.m, rho)
        vec[data.eq] = rho * _RHO_EQ_SCALE
        vec[data.free] = _RHO_MIN
        key = vec.tobytes()
        self.rho, self.rho_vec = rho, vec
        if self._factor is None or key != self._key:
            prob = data.prob
            K = prob.P + self.settings.sigma * sp.eye(prob.n) + prob.A.T @ sp.diags(vec) @ prob.A
            self._factor = Factor(sp.triu(K, format="csc"), spd=True, upper=True)
            self._key = key
            self.n_factorizations += 1


def run_admm(data: ProblemData, settings: SolverSettings, st: AdmmState) -> QpSolution:
    prob = data.prob
    q, l, u = prob.q, prob.l, prob.u
    A, AT, P = data.A, data.AT, data.P
    sigma, alpha = settings.sigma, settings.alpha
    st.set_rho(data, st.rho)
    rho, solve = st.rho_vec, st._factor.solve
    x, z, y = st.x, st.z, st.y

    last_key = None
    tried = set()
    converged = False
    it = 0
    for it in range(1, settings.max_iter + 1):
        x_prev, y_prev = x, y
        xt = solve(sigma * x - q + AT @ (rho * z - y))
        zt = A @ xt
        x = alpha * xt + (1.0 - alpha) * x
        zr = alpha * zt + (1.0 - alpha) * z
        z_new = np.clip(zr + y / rho, l, u)
        y = y + rho * (zr - z_new)
        z = z_new

        if it % settings.check_interval and it != settings.max_iter:
            continue

        st.x, st.z, st.y = x, z, y
        Ax, Px, ATy = A @ x, P @ x, AT @ y
        r_p = inf_norm(Ax - z)
        r_d = inf_norm(Px + q + ATy)
        scale_p = max(inf_norm(Ax), inf_norm(z))
        scale_d = max(inf_norm(Px), inf_norm(ATy), inf_norm(q))
        eps_p = settings.eps_abs + settings.eps_rel * scale_p
        eps_d = settings.eps_abs + settings.eps_rel * scale_d
        if r_p <= eps_p and r_d <= eps_d:
            converged = True
            break

        if settings.polish:
            low, up = active_set(z, y, l, u)
            key = low.tobytes() + up.tobytes()
            if key == last_key and key not in tried:
                tried.add(key)
                pol = polish(data, settings, low, up, it, center=(x, y), method="admm")
                if pol is not None:
                    return pol
            last_key = key

        cert = _primal_certificate(data, settings, y - y_prev)
        if cert is not None:
            return finish(data, settings, x, y, Status.PRIMAL_INFEASIBLE, it,
                          certificate=cert, method="admm")
        cert = _dual_certificate(data, settings, x - x_prev)
        if cert is not None:
            return finish(data, settings, x, y, Status.DUAL_INFEASIBLE, it,
                          certificate=cert, method="admm")

        if settings.adaptive_rho:
            ratio = np.sqrt((r_p / max(scale_p, 1e-10)) / (r_d / max(scale_d, 1e-10) + 1e-30))
            if ratio > 5.0 or ratio < 0.2:
                st.set_rho(data, st.rho * ratio)
                rho, solve = st.rho_vec, st._factor.solve

    st.x, st.z, st.y = x, z, y
    if not converged:
        return finish(data, settings, x, y, Status.MAX_ITER, it, method="admm")
    if settings.polish:
        pol = polish(data, settings, *active_set(z, y, l, u), it, center=(x, y),
                     method="admm")
        if pol is not None:
            return pol
    return finish(data, settings, x, y, Status.SOLVED, it, method="admm")


def _primal_certificate(data, settings, dy) -> Optional[np.ndarray]:
    """Normalized ``dy`` if it certifies ``{l <= Az <= u}`` is empty."""
    prob = data.prob
    dy = dy.copy()
    dy[np.isinf(prob.u) & (dy > 0)] = 0.0
    dy[np.isinf(prob.l) & (dy < 0)] = 0.0
    norm = inf_norm(dy)
    if norm <= _DIV_TOL:
        return None
    eps = settings.eps_prim_inf * norm
    if inf_norm(data.AT @ dy) > eps:
        return None
    pos, neg = np.maximum(dy, 0), np.minimum(dy, 0)
    support = (np.dot(np.where(pos > 0, prob.u, 0.0), pos)
               + np.dot(np.where(neg < 0, prob.l, 0.0), neg))
    return dy / norm if support < -eps else None


def _dual_certificate(data, settings, dx) -> Optional[np.ndarray]:
    """Normalized ``dx`` if it is a feasible direction of unbounded descent."""
    prob = data.prob
    norm = inf_norm(dx)
    if norm <= _DIV_TOL:
        return None
    eps = settings.eps_dual_inf * norm
    if prob.q @ dx > -eps or inf_norm(data.P @ dx) > eps:
        return None
    Adx = data.A @ dx
    upper_ok = np.isinf(prob.u) | (Adx <= eps)
    lower_ok = np.isinf(prob.l) | (Adx >= -eps)
    return dx / norm if np.all(upper_ok & lower_ok) else None
