from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

# problems this small get an eigenvalue check on P
PSD_CHECK_MAX_N = 64
PSD_TOL = 1e-8


class Status(enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"


@dataclass
class QpProblem:
    """Convex QP in standard form::

        minimize    0.5 z'Pz + q'z + r
        subject to  l <= Az <= u

    Equality rows have ``l == u``; one-sided rows use ``-inf``/``inf``.
    ``r`` is a constant offset carried only for objective reporting.
    """

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray
    r: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.P = sp.csc_matrix(self.P, shape=(n, n), dtype=float)
        A = sp.csc_matrix(self.A, dtype=float) if self.A is not None else sp.csc_matrix((0, n))
        if A.shape[1] != n:
            raise ValueError(f"A has {A.shape[1]} columns, expected {n}")
        self.A = A
        m = A.shape[0]
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        if self.l.size != m or self.u.size != m:
            raise ValueError(f"bound vectors must have length {m}")
        if np.any(self.l > self.u):
            raise ValueError("lower bound exceeds upper bound")
        if (self.P - self.P.T).count_nonzero():
            raise ValueError("P is not symmetric")
        if 0 < n <= PSD_CHECK_MAX_N:
            lam = np.linalg.eigvalsh(self.P.toarray())[0]
            if lam < -PSD_TOL:
                raise ValueError(f"P is not positive semidefinite (min eigenvalue {lam:.3g})")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, z) -> float:
        return float(0.5 * z @ (self.P @ z) + self.q @ z + self.r)

    def primal_residual(self, z) -> float:
        """Infinity-norm distance of ``Az`` to the box ``[l, u]``."""
        if self.m == 0:
            return 0.0
        Az = self.A @ z
        return float(np.max(np.abs(np.minimum(Az - self.l, 0) + np.maximum(Az - self.u, 0))))

    def dual_residual(self, z, y) -> float:
        """Infinity norm of the stationarity residual ``Pz + q + A'y``."""
        return float(np.max(np.abs(self.P @ z + self.q + self.A.T @ y), initial=0.0))

    def same_structure(self, other: QpProblem) -> bool:
        return (self.n == other.n and self.m == other.m
                and _same_pattern(self.P, other.P) and _same_pattern(self.A, other.A))


def _same_pattern(X, Y):
    return (X.shape == Y.shape and X.nnz == Y.nnz
            and np.array_equal(X.indptr, Y.indptr) and np.array_equal(X.indices, Y.indices))


@dataclass
class QpSolution:
    """Solver output.

    Sign convention for duals: ``y_i >= 0`` when row ``i`` sits on its upper
    bound, ``y_i <= 0`` on its lower bound. ``eps_primal``/``eps_dual`` are the
    thresholds the residuals were tested against. For the infeasibility
    statuses ``certificate`` holds the certifying direction (dual direction
    for primal infeasibility, primal direction for dual infeasibility).
    """

    z: np.ndarray
    y: np.ndarray
    status: Status
    iterations: int
    primal_residual: float
    dual_residual: float
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    objective: float = float("nan")
    polished: bool = False
    certificate: Optional[np.ndarray] = None
    solve_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED
