"""Platoon control laws: linear feedback and distributed MPC.

The DMPC problem for follower ``i`` is built in the follower's own frame
(positions relative to its current position) and stacked as::

    z = [p(0), v(0), ..., p(H), v(H), u(0), ..., u(H-1), (epigraph vars)]

Rows, in order: initial condition (2), dynamics (2H), terminal state (2),
terminal input (1), velocity-rate bounds (H), velocity bounds for k=1..H (H),
and for the 1-norm cost two rows per epigraph variable.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .model import DynamicsParams, VehicleState, step_dynamics
from .solver import QpProblem, QpWorkspace, SolverSettings, Status


@dataclass(frozen=True)
class Trajectory:
    """States ``x`` of shape (H+1, 2) as (p, v) rows and inputs ``u`` of shape (H,)."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if x.ndim != 2 or x.shape[1] != 2 or u.shape != (x.shape[0] - 1,):
            raise ValueError(f"inconsistent trajectory shapes {x.shape} / {u.shape}")
        if x.shape[0] < 2:
            raise ValueError("trajectory horizon must be at least 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def horizon(self) -> int:
        return self.u.size

    def state(self, k: int) -> VehicleState:
        return VehicleState(float(self.x[k, 0]), float(self.x[k, 1]))

    def offset(self, dp: float) -> Trajectory:
        """Same trajectory with every position shifted by ``dp``."""
        x = self.x.copy()
        x[:, 0] += dp
        return Trajectory(x, self.u)

    def dynamics_residual(self, dyn: DynamicsParams) -> float:
        nxt = self.x[:-1] @ dyn.A.T + np.outer(self.u, dyn.B)
        return float(np.max(np.abs(nxt - self.x[1:])))


def rollout(x0: VehicleState, inputs, dyn: DynamicsParams) -> Trajectory:
    x = [x0]
    for uk in inputs:
        x.append(step_dynamics(x[-1], float(uk), dyn))
    return Trajectory(np.array([[s.p, s.v] for s in x]), np.asarray(inputs, dtype=float))


def init_assumed(x0: VehicleState, H: int, dyn: DynamicsParams) -> Trajectory:
    """Constant-velocity hold from ``x0``, used before any plan exists."""
    return rollout(x0, np.full(H, x0.v), dyn)


def shift_assumed(plan: Trajectory, dyn: DynamicsParams) -> Trajectory:
    """Advance a plan by one step, extending it at its terminal velocity."""
    xH = plan.state(plan.horizon)
    tail = step_dynamics(xH, xH.v, dyn)
    x = np.vstack([plan.x[1:], [tail.p, tail.v]])
    u = np.append(plan.u[1:], xH.v)
    return Trajectory(x, u)


def anchor_predecessor(published: Trajectory, p_ego: float, measured_gap: float) -> Trajectory:
    """Place a predecessor's shared trajectory in the follower's frame.

    The follower has no global position for its predecessor; it pins the
    first assumed position to its own position plus the measured gap.
    """
    return published.offset(p_ego + measured_gap - published.x[0, 0])


# -- linear feedback ----------------------------------------------------------

@dataclass(frozen=True)
class LfbkConfig:
    k_p: float = 1.0
    k_v: float = 2.0

    def __post_init__(self):
        if not (self.k_p > 0 and self.k_v > 0):
            raise ValueError("linear feedback gains must be positive")


def lfbk_control(ego: VehicleState, measured_gap: float, pred_velocity: float,
                 cfg: LfbkConfig, d_des: float) -> float:
    """Desired velocity from spacing and relative-velocity feedback.

    The ego velocity is fed forward so that zero error holds the current
    speed; the spacing term pushes toward ``gap == d_des``.
    """
    return ego.v + cfg.k_p * (measured_gap - d_des) + cfg.k_v * (pred_velocity - ego.v)


class LinearFeedbackController:
    def __init__(self, cfg: LfbkConfig, d_des: float):
        self.cfg = cfg
        self.d_des = d_des

    def control(self, ego: VehicleState, measured_gap: float, pred_velocity: float) -> float:
        return lfbk_control(ego, measured_gap, pred_velocity, self.cfg, self.d_des)


# -- distributed MPC ----------------------------------------------------------

class CostKind(str, enum.Enum):
    SQUARED_TWO_NORM = "squared_two_norm"
    ONE_NORM = "one_norm"


@dataclass(frozen=True)
class DmpcConfig:
    """Weights, horizon and bounds of one vehicle's DMPC problem.

    ``F``, ``G`` (2x2) and ``R`` weight the squared 2-norm cost; ``s``, ``q``,
    ``r`` weight the 1-norm cost. Only the set matching ``cost_kind`` is used.
    """

    cost_kind: CostKind = CostKind.SQUARED_TWO_NORM
    H: int = 100
    F: np.ndarray = field(default_factory=lambda: np.eye(2))
    G: np.ndarray = field(default_factory=lambda: np.eye(2))
    R: float = 1.0
    s: float = 1.0
    q: float = 1.0
    r: float = 1.0
    d_des: float = 5.0
    v_min: float = 0.0
    v_max: float = 35.0
    a_max: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "cost_kind", CostKind(self.cost_kind))
        F = np.asarray(self.F, dtype=float).reshape(2, 2)
        G = np.asarray(self.G, dtype=float).reshape(2, 2)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "R", float(np.asarray(self.R, dtype=float).reshape(())))
        if self.H < 2:
            raise ValueError("horizon H must be at least 2")
        if self.cost_kind is CostKind.SQUARED_TWO_NORM:
            for name, W in (("F", F), ("G", G)):
                if not np.array_equal(W, W.T) or np.linalg.eigvalsh(W)[0] <= 0:
                    raise ValueError(f"{name} must be symmetric positive definite")
            if not self.R > 0:
                raise ValueError("R must be positive")
        elif not (self.s > 0 and self.q > 0 and self.r > 0):
            raise ValueError("1-norm weights s, q, r must be positive")
        if not (self.v_min < self.v_max and self.a_max > 0 and self.d_des > 0):
            raise ValueError("invalid DMPC bounds")


@dataclass
class DmpcControllerState:
    """What a follower carries between steps.

    ``assumed_pred`` must already be expressed in the follower's frame (see
    :func:`anchor_predecessor`).
    """

    assumed_self: Trajectory
    assumed_pred: Trajectory
    last_solution: Optional[Trajectory] = None


@dataclass
class _Template:
    """Parts of the transcribed problem that depend only on the configuration."""

    P: sp.csc_matrix
    A: sp.csc_matrix
    n_base: int
    n: int
    m: int
    eq_rows: int


def _key(cfg: DmpcConfig, dyn: DynamicsParams):
    return (cfg.cost_kind, cfg.H, cfg.F.tobytes(), cfg.G.tobytes(), cfg.R, dyn.dt, dyn.tau)


@functools.lru_cache(maxsize=64)
def _template_cached(key) -> _Template:
    kind, H, Fb, Gb, R, dt, tau = key
    F = np.frombuffer(Fb).reshape(2, 2)
    G = np.frombuffer(Gb).reshape(2, 2)
    a = 1.0 - dt / tau
    b = dt / tau
    n_base = 2 * (H + 1) + H
    iu = 2 * (H + 1)
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    # equality rows
    put(0, 0, 1.0)
    put(1, 1, 1.0)
    for k in range(H):
        r = 2 + 2 * k
        put(r, 2 * k + 2, 1.0)
        put(r, 2 * k, -1.0)
        put(r, 2 * k + 1, -dt)
        put(r + 1, 2 * k + 3, 1.0)
        put(r + 1, 2 * k + 1, -a)
        put(r + 1, iu + k, -b)
    r = 2 + 2 * H
    put(r, 2 * H, 1.0)
    put(r + 1, 2 * H + 1, 1.0)
    put(r + 2, iu + H - 1, 1.0)
    eq_rows = 5 + 2 * H
    # velocity-rate rows, then velocity bounds
    for k in range(H):
        put(eq_rows + k, 2 * k + 3, 1.0)
        put(eq_rows + k, 2 * k + 1, -1.0)
    for k in range(1, H + 1):
        put(eq_rows + H + k - 1, 2 * k + 1, 1.0)
    m = eq_rows + 2 * H
    n = n_base

    if kind is CostKind.ONE_NORM:
        # per step: |dp_self|, |dv_self|, |dp_pred|, |dv_pred|, |du|
        for k in range(H):
            targets = (2 * k, 2 * k + 1, 2 * k, 2 * k + 1, iu + k)
            for j, col in enumerate(targets):
                e = n_base + 5 * k + j
                put(m, col, 1.0)
                put(m, e, -1.0)
                put(m + 1, col, 1.0)
                put(m + 1, e, 1.0)
                m += 2
        n = n_base + 5 * H
        P = sp.csc_matrix((n, n))
    else:
        Wx = 2.0 * (F + G)
        blocks = [Wx] * H + [np.zeros((2, 2))] + [np.array([[2.0 * R]])] * H
        P = sp.csc_matrix(sp.block_diag(blocks))
        # exact symmetry after float round-off
        P = sp.csc_matrix((P + P.T) * 0.5)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, n))
    return _Template(P=P, A=A, n_base=n_base, n=n, m=m, eq_rows=eq_rows)


def problem_template(cfg: DmpcConfig, dyn: DynamicsParams) -> _Template:
    return _template_cached(_key(cfg, dyn))


def transcribe_dmpc(ego: VehicleState, ctrl: DmpcControllerState, cfg: DmpcConfig,
                    dyn: DynamicsParams) -> QpProblem:
    """Build the standard-form QP (or LP) for one follower at one timestep.

    Positions in the resulting problem are relative to ``ego.p``.
    """
    H = cfg.H
    if ctrl.assumed_self.horizon != H or ctrl.assumed_pred.horizon != H:
        raise ValueError(f"assumed trajectories must have horizon {H}")
    tpl = problem_template(cfg, dyn)
    xa = ctrl.assumed_self.x.copy()
    xa[:, 0] -= ego.p
    # predecessor target: its assumed states offset by the desired spacing
    xt = ctrl.assumed_pred.x.copy()
    xt[:, 0] -= ego.p + cfg.d_des
    v_term = xt[H, 1]
    u_ref = ego.v
    iu = 2 * (H + 1)

    l = np.empty(tpl.m)
    u = np.empty(tpl.m)
    l[:2] = u[:2] = (0.0, ego.v)
    l[2:2 + 2 * H] = u[2:2 + 2 * H] = 0.0
    r = 2 + 2 * H
    l[r:r + 3] = u[r:r + 3] = (xt[H, 0], v_term, v_term)
    e = tpl.eq_rows
    dv = dyn.dt * cfg.a_max
    l[e:e + H], u[e:e + H] = -dv, dv
    l[e + H:e + 2 * H], u[e + H:e + 2 * H] = cfg.v_min, cfg.v_max

    q = np.zeros(tpl.n)
    const = 0.0
    if cfg.cost_kind is CostKind.SQUARED_TWO_NORM:
        F, G, R = cfg.F, cfg.G, cfg.R
        lin = -2.0 * (xa[:H] @ F + xt[:H] @ G)  # F, G symmetric
        q[:2 * H] = lin.ravel()
        q[iu:iu + H] = -2.0 * R * u_ref
        const = (np.einsum("ki,ij,kj->", xa[:H], F, xa[:H])
                 + np.einsum("ki,ij,kj->", xt[:H], G, xt[:H]) + H * R * u_ref ** 2)
    else:
        weights = np.tile([cfg.s, cfg.s, cfg.q, cfg.q, cfg.r], H)
        q[tpl.n_base:] = weights
        refs = np.column_stack([xa[:H, 0], xa[:H, 1], xt[:H, 0], xt[:H, 1],
                                np.full(H, u_ref)]).ravel()
        m0 = e + 2 * H
        l[m0::2], u[m0::2] = -np.inf, refs
        l[m0 + 1::2], u[m0 + 1::2] = refs, np.inf
    return QpProblem(tpl.P, q, tpl.A, l, u, r=const)


def _decode(z: np.ndarray, H: int, p0: float) -> Trajectory:
    x = z[:2 * (H + 1)].reshape(H + 1, 2).copy()
    x[:, 0] += p0
    return Trajectory(x, z[2 * (H + 1):3 * H + 2].copy())


@dataclass
class DmpcStep:
    """Outcome of one DMPC control step."""

    u: float
    plan: Trajectory
    status: Status
    fallback: bool
    iterations: int = 0
    solve_time: float = 0.0
    cost: float = float("nan")


def _shift_blocks(vec, segments):
    """Advance time-indexed blocks of a stacked vector by one step.

    ``segments`` holds ``(start, length, stride)``; each block drops its first
    ``stride`` entries and repeats its last ``stride`` entries at the end.
    """
    out = vec.copy()
    for start, length, stride in segments:
        seg = vec[start:start + length]
        out[start:start + length - stride] = seg[stride:]
        out[start + length - stride:start + length] = seg[length - stride:]
    return out


class DmpcSolver:
    """Reusable solver for one vehicle's sequence of DMPC problems.

    Problems for a fixed configuration share ``P`` and ``A``, so matrix
    preprocessing is kept across timesteps. Each solve is warm-started from
    the previous solution advanced by one step, which also supplies the
    active-set guess the solver tries first.
    """

    def __init__(self, settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self._ws: Optional[QpWorkspace] = None
        self._last = None

    def solve(self, problem: QpProblem, cfg: DmpcConfig, p0: float):
        if self._ws is None or not self._ws.problem.same_structure(problem):
            self._ws = QpWorkspace(problem, self.settings)
            self._last = None
        else:
            self._ws.update(problem)
            if self._last is not None:
                self._ws.warm_start(*self._advance(cfg, p0))
        sol = self._ws.solve()
        self._last = (sol.z, sol.y, p0) if sol.solved else None
        return sol

    def _advance(self, cfg: DmpcConfig, p0: float):
        z, y, p_prev = self._last
        H = cfg.H
        nx = 2 * (H + 1)
        n_aux = z.size - (nx + H)
        z = _shift_blocks(z, [(0, nx, 2), (nx, H, 1)] + ([(nx + H, n_aux, 5)] if n_aux else []))
        z[0:nx:2] += p_prev - p0
        eq = 5 + 2 * H
        n_epi = y.size - eq - 2 * H
        segs = [(2, 2 * H, 2), (eq, H, 1), (eq + H, H, 1)]
        if n_epi:
            segs.append((eq + 2 * H, n_epi, 10))
        return z, _shift_blocks(y, segs)


def dmpc_control(ego: VehicleState, ctrl: DmpcControllerState, cfg: DmpcConfig,
                 dyn: DynamicsParams, solver: Optional[DmpcSolver] = None) -> DmpcStep:
    """Solve the DMPC problem and return the first input and full plan.

    When the solver does not return an optimal solution the vehicle applies
    the next input of its assumed (shifted) plan, which is the second input of
    the last optimal plan on the first failure and keeps advancing along that
    plan while failures persist. Without any plan it holds its velocity.
    ``fallback`` is then set.
    """
    solver = solver or DmpcSolver()
    prob = transcribe_dmpc(ego, ctrl, cfg, dyn)
    sol = solver.solve(prob, cfg, ego.p)
    if sol.solved:
        plan = _decode(sol.z, cfg.H, ego.p)
        return DmpcStep(float(plan.u[0]), plan, sol.status, False, sol.iterations,
                        sol.solve_time, sol.objective)
    if ctrl.last_solution is not None:
        plan = ctrl.assumed_self
        u_apply = float(plan.u[0])
    else:
        plan = init_assumed(ego, cfg.H, dyn)
        u_apply = ego.v
    return DmpcStep(u_apply, plan, sol.status, True, sol.iterations, sol.solve_time)


class DmpcController:
    """Stateful DMPC follower: keeps its assumed trajectory between steps."""

    def __init__(self, cfg: DmpcConfig, dyn: DynamicsParams, x0: VehicleState,
                 settings: Optional[SolverSettings] = None):
        self.cfg = cfg
        self.dyn = dyn
        self.solver = DmpcSolver(settings)
        self.assumed = init_assumed(x0, cfg.H, dyn)
        self.last_solution: Optional[Trajectory] = None

    def control(self, ego: VehicleState, assumed_pred: Trajectory) -> DmpcStep:
        ctrl = DmpcControllerState(self.assumed, assumed_pred, self.last_solution)
        step = dmpc_control(ego, ctrl, self.cfg, self.dyn, self.solver)
        if not step.fallback:
            self.last_solution = step.plan
        self.assumed = shift_assumed(step.plan, self.dyn)
        return step


# -- stability conditions -----------------------------------------------------

SQUARED_NORM_CAVEAT = ("no sufficient stability conditions are known for the squared 2-norm "
                       "cost; F_i >= G_(i+1) is the condition proven for the weighted "
                       "(unsquared) 2-norm cost and is reported for reference only")


@dataclass(frozen=True)
class PairCheck:
    vehicle: int
    follower: int
    satisfied: bool
    margin: float  # min eigenvalue of F_i - G_(i+1), or s_i - q_(i+1)


@dataclass(frozen=True)
class StabilityReport:
    cost_kind: CostKind
    pairs: tuple[PairCheck, ...]
    caveat: Optional[str] = None

    @property
    def satisfied(self) -> bool:
        return all(p.satisfied for p in self.pairs)

    @property
    def violations(self) -> list[PairCheck]:
        return [p for p in self.pairs if not p.satisfied]

    def lines(self) -> list[str]:
        out = []
        for p in self.pairs:
            verdict = "Satisfied" if p.satisfied else "Violated"
            out.append(f"pair ({p.vehicle}, {p.follower}): {verdict} (margin {p.margin:.6g})")
        if self.caveat:
            out.append(f"note: {self.caveat}")
        return out


def check_stability_conditions(cfgs: Sequence[DmpcConfig], tol: float = 1e-12) -> StabilityReport:
    """Check the pairwise weight conditions between each vehicle and its follower.

    For the 1-norm cost: ``s_i >= q_(i+1)``. For quadratic weights:
    ``F_i - G_(i+1)`` positive semidefinite.
    """
    kinds = {c.cost_kind for c in cfgs}
    if len(kinds) != 1:
        raise ValueError("all vehicles must use the same DMPC cost kind")
    kind = kinds.pop()
    pairs = []
    for i in range(len(cfgs) - 1):
        a, b = cfgs[i], cfgs[i + 1]
        if kind is CostKind.ONE_NORM:
            margin = a.s - b.q
        else:
            margin = float(np.linalg.eigvalsh(a.F - b.G)[0])
        pairs.append(PairCheck(i, i + 1, margin >= -tol, margin))
    caveat = SQUARED_NORM_CAVEAT if kind is CostKind.SQUARED_TWO_NORM else None
    return StabilityReport(kind, tuple(pairs), caveat)

