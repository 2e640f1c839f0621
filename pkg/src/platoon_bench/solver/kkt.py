"""Residuals, termination thresholds and active-set polishing shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import qdldl

from .problem import QpProblem, QpSolution, Status

DENSE_MAX_N = 60


@dataclass
class SolverSettings:
    """Tolerances and algorithm parameters.

    ``method`` selects the main algorithm: ``"admm"``, ``"ipm"`` or
    ``"auto"`` (interior point for linear objectives, ADMM otherwise).
    """

    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_prim_inf: float = 1e-6
    eps_dual_inf: float = 1e-6
    max_iter: int = 4000
    method: str = "auto"
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_interval: int = 10
    adaptive_rho: bool = True
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine_iter: int = 3
    polish_rounds: int = 4
    ipm_max_iter: int = 60


class Factor:
    """Factorization of a symmetric quasi-definite matrix.

    Dense below ``DENSE_MAX_N``; above it a sparse LDL' without pivoting,
    which quasi-definiteness makes stable for any ordering. ``refactor``
    reuses the symbolic analysis for a matrix with the same pattern.
    With ``upper=True`` only the upper triangle of ``K`` is given.
    """

    def __init__(self, K, spd: bool = False, upper: bool = False):
        self._dense = K.shape[0] <= DENSE_MAX_N
        self._spd = spd
        if self._dense:
            self._factor_dense(K, upper)
        else:
            self._ldl = qdldl.Solver(sp.csc_matrix(K), upper=upper)
            self.solve = self._ldl.solve

    def _factor_dense(self, K, upper):
        Kd = K.toarray() if sp.issparse(K) else np.array(K, dtype=float)
        if upper:
            Kd = np.triu(Kd) + np.triu(Kd, 1).T
        if self._spd:
            cho = la.cho_factor(Kd, check_finite=False)
            self.solve = lambda b: la.cho_solve(cho, b, check_finite=False)
        else:
            lu = la.lu_factor(Kd, check_finite=False)
            self.solve = lambda b: la.lu_solve(lu, b, check_finite=False)

    def refactor(self, K, upper: bool = False):
        if self._dense:
            self._factor_dense(K, upper)
        else:
            self._ldl.update(K, upper=upper)


class ProblemData:
    """Matrix formats and row classifications derived from a problem.

    Rebuilt only when ``P`` or ``A`` change, so that a sequence of problems
    differing in ``q``, ``l``, ``u`` pays for conversions once.
    """

    def __init__(self, prob: QpProblem):
        self.P = prob.P.tocsr()
        self.A = prob.A.tocsr()
        self.AT = prob.A.T.tocsr()
        Pc = prob.P.tocoo()
        self.P_coo = (Pc.row, Pc.col, Pc.data)
        keep = Pc.row <= Pc.col
        self.P_upper = (Pc.row[keep], Pc.col[keep], Pc.data[keep])
        self.P_is_zero = prob.P.count_nonzero() == 0
        self.bind(prob)

    def matches(self, prob: QpProblem) -> bool:
        return (np.array_equal(self.P.data, prob.P.tocsr().data)
                and np.array_equal(self.A.data, prob.A.tocsr().data)
                and self.A.shape == prob.A.shape)

    def bind(self, prob: QpProblem):
        self.prob = prob
        self.eq = prob.l == prob.u
        self.free = np.isinf(prob.l) & np.isinf(prob.u)


def inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def tolerances(data: ProblemData, settings: SolverSettings, z, Ax, Px, ATy):
    s = settings
    eps_p = s.eps_abs + s.eps_rel * max(inf_norm(Ax), inf_norm(z))
    eps_d = s.eps_abs + s.eps_rel * max(inf_norm(Px), inf_norm(ATy), inf_norm(data.prob.q))
    return eps_p, eps_d


def finish(data: ProblemData, settings: SolverSettings, x, y, status: Status, it: int,
           certificate=None, polished=False, method="") -> QpSolution:
    """Package a candidate, re-checking the residual contract for SOLVED."""
    prob = data.prob
    Ax, Px, ATy = data.A @ x, data.P @ x, data.AT @ y
    z = np.clip(Ax, prob.l, prob.u)
    r_p = prob.primal_residual(x)
    r_d = inf_norm(Px + prob.q + ATy)
    eps_p, eps_d = tolerances(data, settings, z, Ax, Px, ATy)
    if status is Status.SOLVED and not (r_p <= eps_p and r_d <= eps_d):
        status = Status.MAX_ITER
    if status is Status.PRIMAL_INFEASIBLE:
        objective = np.inf
    elif status is Status.DUAL_INFEASIBLE:
        objective = -np.inf
    else:
        objective = prob.objective(x)
    return QpSolution(z=np.array(x, copy=True), y=np.array(y, copy=True), status=status,
                      iterations=it, primal_residual=r_p, dual_residual=r_d, eps_primal=eps_p,
                      eps_dual=eps_d, objective=objective, polished=polished,
                      certificate=certificate, extra={"method": method})


def active_set(z, y, l, u):
    """Rows judged to sit on their lower / upper bound from a primal-dual pair."""
    return (z - l < -y), (u - z < y)


def polish(data: ProblemData, settings: SolverSettings, low, up, it: int,
           center=None, method: str = "", rounds: int = 1) -> Optional[QpSolution]:
    """Solve the equality-constrained QP on a guessed active set.

    The regularization is centered at ``center = (x, y)`` when given: where
    the active set leaves the solution undetermined (a face of optimal
    points, common for linear objectives), the result stays at the center
    instead of jumping to the minimum-norm point.

    With ``rounds > 1`` a rejected candidate is used to re-classify the rows
    (primal-dual active-set step) and the solve is repeated.

    Returns a SOLVED solution only if the result passes the residual contract
    and every active multiplier has the sign optimality requires; otherwise
    None (the guess was wrong).
    """
    prob = data.prob
    seen = set()
    for _ in range(rounds):
        key = low.tobytes() + up.tobytes()
        if key in seen:
            return None
        seen.add(key)
        out = _reduced_kkt(data, settings, low, up, center)
        if out is None:
            return None
        x, y, low, up = out
        res = finish(data, settings, x, y, Status.SOLVED, it, polished=True, method=method)
        if res.status is Status.SOLVED:
            ineq = ~data.eq
            if not (np.any(y[low & ineq] > res.eps_dual) or np.any(y[up] < -res.eps_dual)):
                return res
        if res.primal_residual > 1e3 * (1.0 + res.eps_primal):
            return None  # singular guess, no useful information
        low, up = active_set(data.A @ x, y, prob.l, prob.u)
        center = (x, y) if center is None else center
    return None


def _reduced_kkt(data: ProblemData, settings: SolverSettings, low, up, center):
    prob = data.prob
    low = low | data.eq
    up = up & ~data.eq
    idx = np.flatnonzero(low | up)
    b = np.where(low, prob.l, prob.u)[idx]
    n, k = prob.n, idx.size
    delta = settings.polish_delta

    Ar = data.A[idx]
    Arc = Ar.tocoo()
    ArT = Ar.T.tocsr()
    pr, pc, pv = data.P_upper
    diag_n = np.arange(n)
    diag_k = np.arange(n, n + k)
    K = sp.csc_matrix((np.concatenate([pv, Arc.data, np.full(n, delta), np.full(k, -delta)]),
                       (np.concatenate([pr, Arc.col, diag_n, diag_k]),
                        np.concatenate([pc, Arc.row + n, diag_n, diag_k]))),
                      shape=(n + k, n + k))
    P = data.P

    def residual(sol):
        xs, ys = sol[:n], sol[n:]
        return np.concatenate([-prob.q - P @ xs - ArT @ ys, b - Ar @ xs])

    rhs_reg = np.concatenate([-prob.q, b])
    if center is not None:
        rhs_reg = rhs_reg + delta * np.concatenate([center[0], -np.asarray(center[1])[idx]])
    try:
        factor = Factor(K, upper=True)
        sol = factor.solve(rhs_reg)
        for _ in range(settings.polish_refine_iter):
            sol = sol + factor.solve(residual(sol))
    except (RuntimeError, la.LinAlgError, ValueError):  # singular guess
        return None
    if not np.all(np.isfinite(sol)):
        return None
    x = sol[:n]
    y = np.zeros(prob.m)
    y[idx] = sol[n:]
    return x, y, low, up
