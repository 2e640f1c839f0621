from __future__ import annotations

import time
from typing import Iterable, Iterator, Optional

import numpy as np

from .admm import AdmmState, run_admm
from .ipm import run_ipm
from .kkt import ProblemData, SolverSettings, active_set, polish
from .problem import QpProblem, QpSolution


class QpWorkspace:
    """Reusable solver state for a stream of equally structured problems.

    Matrix conversions and the ADMM factorization survive ``update`` as long
    as ``P`` and ``A`` are unchanged. A warm start is used twice: its active
    set is tried first with a direct KKT solve, and its iterates seed ADMM if
    that guess fails.
    """

    def __init__(self, problem: QpProblem, settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self.data = ProblemData(problem)
        self.admm = AdmmState(self.data, self.settings)
        self._guess = None

    @property
    def problem(self) -> QpProblem:
        return self.data.prob

    def update(self, problem: QpProblem):
        if not self.data.prob.same_structure(problem):
            raise ValueError("problem dimensions or sparsity differ from the workspace's")
        if self.data.matches(problem):
            self.data.bind(problem)
        else:
            self.data = ProblemData(problem)
            self.admm.reset_matrices()
        self._guess = None

    def warm_start(self, z=None, y=None):
        prob = self.data.prob
        st = self.admm
        if z is not None:
            st.x = np.asarray(z, dtype=float).copy()
            st.z = np.clip(self.data.A @ st.x, prob.l, prob.u)
        if y is not None:
            st.y = np.asarray(y, dtype=float).copy()
        if z is not None and y is not None:
            self._guess = (st.x.copy(), st.z.copy(), st.y.copy())

    def solve(self) -> QpSolution:
        t0 = time.perf_counter()
        sol = self._solve()
        sol.solve_time = time.perf_counter() - t0
        if sol.solved:
            st = self.admm
            st.x = sol.z.copy()
            st.y = sol.y.copy()
            st.z = np.clip(self.data.A @ st.x, self.problem.l, self.problem.u)
        return sol

    def _solve(self) -> QpSolution:
        s = self.settings
        data = self.data
        guess, self._guess = self._guess, None
        if guess is not None and s.polish:
            x, z, y = guess
            low, up = active_set(z, y, data.prob.l, data.prob.u)
            sol = polish(data, s, low, up, 0, center=(x, y), method="warm",
                         rounds=s.polish_rounds)
            if sol is not None:
                return sol
        use_ipm = s.method == "ipm" or (s.method == "auto" and data.P_is_zero)
        if use_ipm:
            sol = run_ipm(data, s)
            if sol is not None:
                return sol
            # stalled: let ADMM produce a certificate or a max-iter verdict
        return run_admm(data, s, self.admm)


def solve(problem: QpProblem, warm_start=None, settings: Optional[SolverSettings] = None,
          tol: Optional[tuple[float, float]] = None) -> QpSolution:
    """Solve ``min 0.5 z'Pz + q'z  s.t.  l <= Az <= u``.

    ``warm_start`` is an optional ``(z, y)`` pair; ``tol`` overrides the
    ``(eps_abs, eps_rel)`` pair of ``settings``.
    """
    ws = QpWorkspace(problem, _with_tol(settings, tol))
    if warm_start is not None:
        ws.warm_start(*warm_start)
    return ws.solve()


def solve_sequence(problems: Iterable[QpProblem], settings: Optional[SolverSettings] = None,
                   tol: Optional[tuple[float, float]] = None) -> Iterator[QpSolution]:
    """Solve a stream of equally structured problems.

    Each problem is warm-started from the last one that solved; a failed
    member neither stops the stream nor seeds the next solve.
    """
    settings = _with_tol(settings, tol)
    ws = None
    last = None
    for prob in problems:
        if ws is None:
            ws = QpWorkspace(prob, settings)
        else:
            ws.update(prob)
            if last is not None:
                ws.warm_start(last.z, last.y)
            else:
                ws.warm_start(np.zeros(prob.n), np.zeros(prob.m))
        sol = ws.solve()
        if sol.solved:
            last = sol
        yield sol


def _with_tol(settings, tol):
    settings = settings or SolverSettings()
    if tol is not None:
        settings = SolverSettings(**{**settings.__dict__, "eps_abs": tol[0], "eps_rel": tol[1]})
    return settings
