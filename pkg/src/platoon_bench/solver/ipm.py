"""Primal-dual interior-point method (Mehrotra predictor-corrector).

Used for linear objectives, where ADMM converges too slowly to reach tight
tolerances. Rows of ``l <= Az <= u`` are split into equalities ``Ez = b``
and one-sided inequalities ``Cz <= d`` with slacks ``s`` and multipliers
``lam``. Each Newton step solves the regularized augmented system::

    [P + C' diag(lam/s) C + dI   E' ] [dz]
    [E                          -dI ] [dnu]

whose sparsity pattern is fixed, so its values are assembled with one
sparse mat-vec per iteration.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kkt import Factor, ProblemData, SolverSettings, active_set, finish, inf_norm, polish
from .problem import QpSolution, Status

_REG = 1e-8
_STEP = 0.99
_POLISH_GAP = 1e-2
_ACCEPT_GAP = 1e-6


class _Structure:
    """Index bookkeeping for the augmented system of one problem structure."""

    def __init__(self, data: ProblemData):
        prob = data.prob
        A = data.A
        n = prob.n
        eq = data.eq
        up = ~eq & np.isfinite(prob.u)
        lo = ~eq & np.isfinite(prob.l)
        self.eq_idx = np.flatnonzero(eq)
        self.up_idx = np.flatnonzero(up)
        self.lo_idx = np.flatnonzero(lo)
        self.E = A[self.eq_idx]
        self.ET = self.E.T.tocsr()
        self.C = sp.vstack([A[self.up_idx], -A[self.lo_idx]]).tocsr()
        self.CT = self.C.T.tocsr()
        me, mi = self.E.shape[0], self.C.shape[0]
        N = n + me
        self.n, self.me, self.mi, self.N = n, me, mi, N

        # contributions of lam_i/s_i * c_i c_i' to the (1,1) block
        rows, cols, coefs, which = [], [], [], []
        C = self.C
        for i in range(mi):
            sl = slice(C.indptr[i], C.indptr[i + 1])
            j, v = C.indices[sl], C.data[sl]
            jj, kk = np.meshgrid(j, j, indexing="ij")
            rows.append(jj.ravel())
            cols.append(kk.ravel())
            coefs.append(np.outer(v, v).ravel())
            which.append(np.full(v.size * v.size, i))
        pr, pc, pv = data.P_coo
        Ec = self.E.tocoo()
        diag = np.arange(N)
        const_r = np.concatenate([pr, Ec.row + n, Ec.col, diag])
        const_c = np.concatenate([pc, Ec.col, Ec.row + n, diag])
        const_v = np.concatenate([pv, Ec.data, Ec.data, np.zeros(N)])
        reg_v = np.concatenate([np.zeros(pv.size + 2 * Ec.data.size),
                                np.full(n, _REG), np.full(me, -_REG)])
        w_r = np.concatenate(rows) if rows else np.zeros(0, int)
        w_c = np.concatenate(cols) if cols else np.zeros(0, int)
        w_v = np.concatenate(coefs) if coefs else np.zeros(0)
        w_i = np.concatenate(which) if which else np.zeros(0, int)
        # only the upper triangle is stored
        ku = const_r <= const_c
        const_r, const_c, const_v, reg_v = const_r[ku], const_c[ku], const_v[ku], reg_v[ku]
        wu = w_r <= w_c
        w_r, w_c, w_v, w_i = w_r[wu], w_c[wu], w_v[wu], w_i[wu]
        all_r = np.concatenate([const_r, w_r])
        all_c = np.concatenate([const_c, w_c])
        keys = all_c.astype(np.int64) * N + all_r
        uniq, inv = np.unique(keys, return_inverse=True)
        nnz = uniq.size
        self.indices = (uniq % N).astype(np.int32)
        counts = np.bincount(uniq // N, minlength=N)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        nc = const_r.size
        self.const = np.bincount(inv[:nc], weights=const_v, minlength=nnz)
        self.reg = np.bincount(inv[:nc], weights=reg_v, minlength=nnz)
        self.M = sp.csr_matrix((w_v, (inv[nc:], w_i)), shape=(nnz, mi))
        col_of = np.repeat(np.arange(N), counts)
        self.diag_pos = np.flatnonzero(self.indices == col_of)

    def matrices(self, W):
        """Upper triangle of the regularized matrix, and a product with the exact one."""
        base = self.const + self.M @ W
        shape = (self.N, self.N)
        K = sp.csc_matrix((base + self.reg, self.indices, self.indptr), shape=shape)
        U = sp.csc_matrix((base, self.indices, self.indptr), shape=shape)
        UT = sp.csr_matrix((base, self.indices, self.indptr), shape=shape)
        dg = np.zeros(self.N)
        dg[self.indices[self.diag_pos]] = base[self.diag_pos]

        def matvec(x):
            return U @ x + UT @ x - dg * x
        return K, matvec


def _structure(data: ProblemData) -> _Structure:
    st = getattr(data, "_ipm_structure", None)
    if st is None:
        st = _Structure(data)
        data._ipm_structure = st
    return st


def _refine(solve, K0, rhs, steps=3):
    """Iterative refinement against the unregularized matrix; None if it fails."""
    tol = 1e-9 * (1.0 + np.max(np.abs(rhs)))
    sol = solve(rhs)
    for _ in range(steps):
        res = rhs - K0(sol)
        if not np.all(np.isfinite(res)):
            return None
        if np.max(np.abs(res)) <= tol:
            return sol
        sol = sol + solve(res)
    return None


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def run_ipm(data: ProblemData, settings: SolverSettings) -> Optional[QpSolution]:
    """Solve to the contract tolerances, or return None if the method stalls.

    A None result leaves infeasibility classification to the caller.
    """
    S = _structure(data)
    prob = data.prob
    n, me, mi = S.n, S.me, S.mi
    q = prob.q
    b = prob.l[S.eq_idx]
    d = np.concatenate([prob.u[S.up_idx], -prob.l[S.lo_idx]])
    P, E, ET, C, CT = data.P, S.E, S.ET, S.C, S.CT

    def assemble_y(nu, lam):
        y = np.zeros(prob.m)
        y[S.eq_idx] = nu
        y[S.up_idx] += lam[:S.up_idx.size]
        y[S.lo_idx] -= lam[S.up_idx.size:]
        return y

    fac = None

    def factor(W):
        nonlocal fac
        K, K0 = S.matrices(W)
        if fac is None:
            fac = Factor(K, upper=True)
        else:
            fac.refactor(K, upper=True)

        lu = None

        def solve(rhs):
            nonlocal lu
            if lu is None:
                sol = _refine(fac.solve, K0, rhs)
                if sol is not None:
                    return sol
                # pivot-free LDL' lost accuracy on an extreme scaling
                full = K + sp.triu(K, 1, format="csc").T
                lu = spla.splu(full.tocsc(), permc_spec="MMD_AT_PLUS_A")
            sol = _refine(lu.solve, K0, rhs)
            return sol if sol is not None else lu.solve(rhs)
        return solve

    # initial point: regularized least squares against the inequalities
    try:
        solve0 = factor(np.ones(mi))
    except (RuntimeError, ValueError):
        return None
    z = solve0(np.concatenate([-q + CT @ d, b]))[:n]
    nu = np.zeros(me)
    s = np.maximum(d - C @ z, 1.0)
    lam = np.ones(mi)

    best, best_gap = None, np.inf
    tried = set()
    for it in range(1, settings.ipm_max_iter + 1):
        Cz = C @ z
        Pz = P @ z
        ATy = ET @ nu + CT @ lam
        r_d = Pz + q + ATy
        r_e = E @ z - b
        r_i = Cz + s - d
        gap = float(s @ lam)
        mu = gap / max(mi, 1)

        # cheap screen before the authoritative check in ``finish``
        viol = max(inf_norm(r_e), float(np.max(r_i - s, initial=0.0)))
        eps_d = settings.eps_abs + settings.eps_rel * max(inf_norm(Pz), inf_norm(ATy), inf_norm(q))
        if viol <= settings.eps_abs + settings.eps_rel * inf_norm(Cz) and inf_norm(r_d) <= eps_d:
            y = assemble_y(nu, lam)
            cand = finish(data, settings, z, y, Status.SOLVED, it, method="ipm")
            if cand.status is Status.SOLVED:
                scale = 1.0 + abs(cand.objective)
                # the polished point is exactly complementary, so it may be
                # accepted well before the gap closes
                if settings.polish and gap <= _POLISH_GAP * scale:
                    low, up = active_set(np.clip(prob.A @ z, prob.l, prob.u), y, prob.l, prob.u)
                    key = low.tobytes() + up.tobytes()
                    if key not in tried:
                        tried.add(key)
                        pol = polish(data, settings, low, up, it, center=(z, y), method="ipm")
                        if pol is not None:
                            return pol
                if gap <= 0.1 * settings.eps_abs * scale:
                    return cand
                if gap < best_gap:
                    best, best_gap = cand, gap

        W = lam / s
        try:
            solve = factor(W)
        except (RuntimeError, ValueError):
            return _breakdown(best, best_gap, settings)

        def newton(r_c):
            t = (lam * r_i - r_c) / s
            sol = solve(np.concatenate([-r_d - CT @ t, -r_e]))
            dz, dnu = sol[:n], sol[n:]
            Cdz = C @ dz
            return dz, dnu, W * Cdz + t, -r_i - Cdz

        # predictor
        dz, dnu, dlam, ds = newton(s * lam)
        a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / max(mi, 1)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dz, dnu, dlam, ds = newton(s * lam + ds * dlam - sigma * mu)
        alpha = _STEP * min(_max_step(s, ds), _max_step(lam, dlam))
        alpha = min(alpha, 1.0)
        if not np.all(np.isfinite(dz)) or alpha < 1e-10:
            return _breakdown(best, best_gap, settings)
        z = z + alpha * dz
        nu = nu + alpha * dnu
        lam = lam + alpha * dlam
        s = s + alpha * ds
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
            return _breakdown(best, best_gap, settings)
    return _breakdown(best, best_gap, settings)


def _breakdown(best, best_gap, settings) -> Optional[QpSolution]:
    """Late numerical trouble: keep a residual-feasible iterate with a small gap."""
    if best is not None and best_gap <= _ACCEPT_GAP * (1.0 + abs(best.objective)):
        return best
    return None
