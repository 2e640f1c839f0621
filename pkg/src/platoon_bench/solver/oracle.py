"""Brute-force reference solvers for small problems.

Both enumerate candidate active sets exhaustively and solve the resulting
linear systems directly, so they share no code path with the ADMM solver.
Only usable for a handful of constraints (the enumeration is exponential).
"""

from __future__ import annotations

import itertools

import numpy as np

from .problem import QpProblem

_FEAS_TOL = 1e-9


def _row_choices(l, u):
    choices = []
    for lo, hi in zip(l, u):
        if lo == hi:
            choices.append(("eq",))
            continue
        opts = ["free"]
        if np.isfinite(lo):
            opts.append("lo")
        if np.isfinite(hi):
            opts.append("hi")
        choices.append(tuple(opts))
    return choices


def active_set_qp(problem: QpProblem):
    """Exact minimizer of a strictly convex QP by active-set enumeration.

    Returns ``(z, y, objective)``; raises ``ValueError`` when no KKT point
    exists (infeasible problem).
    """
    P = problem.P.toarray()
    A = problem.A.toarray()
    q, l, u = problem.q, problem.l, problem.u
    n, m = problem.n, problem.m
    tol = _FEAS_TOL * (1.0 + np.max(np.abs(np.concatenate([q, np.nan_to_num(l, posinf=0, neginf=0),
                                                            np.nan_to_num(u, posinf=0, neginf=0)]))))
    best = None
    for combo in itertools.product(*_row_choices(l, u)):
        rows = [i for i, c in enumerate(combo) if c != "free"]
        rhs_b = np.array([u[i] if combo[i] == "hi" else l[i] for i in rows])
        As = A[rows]
        k = len(rows)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P
        K[:n, n:] = As.T
        K[n:, :n] = As
        try:
            sol = np.linalg.solve(K, np.concatenate([-q, rhs_b]))
        except np.linalg.LinAlgError:
            continue
        z = sol[:n]
        y = np.zeros(m)
        y[rows] = sol[n:]
        Az = A @ z
        if np.any(Az < l - tol) or np.any(Az > u + tol):
            continue
        signs_ok = all((combo[i] != "lo" or y[i] <= tol) and (combo[i] != "hi" or y[i] >= -tol)
                       for i in range(m))
        if not signs_ok:
            continue
        obj = problem.objective(z)
        if best is None or obj < best[2]:
            best = (z, y, obj)
    if best is None:
        raise ValueError("no KKT point found; problem is infeasible")
    return best


def vertex_enumeration_lp(problem: QpProblem):
    """Optimal vertex of a bounded, feasible LP (``P == 0``).

    Every vertex of ``{z : l <= Az <= u}`` is the solution of ``n`` linearly
    independent rows held at one of their bounds; the cheapest feasible one
    is optimal. Returns ``(z, objective)``.
    """
    if problem.P.count_nonzero():
        raise ValueError("vertex enumeration needs a linear objective")
    A = problem.A.toarray()
    q, l, u = problem.q, problem.l, problem.u
    n, m = problem.n, problem.m
    tol = _FEAS_TOL * (1.0 + np.max(np.abs(np.nan_to_num(np.concatenate([l, u]), posinf=0, neginf=0))))
    eq_rows = [i for i in range(m) if l[i] == u[i]]
    other = [i for i in range(m) if l[i] != u[i]]
    need = n - len(eq_rows)
    if need < 0:
        raise ValueError("more equality rows than variables")
    best = None
    for subset in itertools.combinations(other, need):
        rows = eq_rows + list(subset)
        As = A[rows]
        if np.linalg.matrix_rank(As) < n:
            continue
        sides = [("lo", "hi") for _ in subset]
        for choice in itertools.product(*sides):
            b = [l[i] for i in eq_rows]
            ok = True
            for i, c in zip(subset, choice):
                val = l[i] if c == "lo" else u[i]
                if not np.isfinite(val):
                    ok = False
                    break
                b.append(val)
            if not ok:
                continue
            z = np.linalg.solve(As, np.array(b))
            Az = A @ z
            if np.any(Az < l - tol) or np.any(Az > u + tol):
                continue
            obj = problem.objective(z)
            if best is None or obj < best[1]:
                best = (z, obj)
    if best is None:
        raise ValueError("no feasible vertex")
    return best
