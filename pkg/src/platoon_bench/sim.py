"""Synchronous platoon simulation.

Each step has three phases: every vehicle computes its input from data
available at the start of the step (its own state, a measured gap, and the
trajectory its predecessor published during the previous step); every
vehicle publishes its new assumed trajectory; all states advance together.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .controllers import (CostKind, DmpcConfig, DmpcController, LfbkConfig,
                          LinearFeedbackController, Trajectory, anchor_predecessor,
                          check_stability_conditions, init_assumed, rollout, shift_assumed)
from .model import (DynamicsParams, NoiseConfig, PlatoonConfig, VehicleState, measure_spacing,
                    step_dynamics_noisy)
from .solver import SolverSettings, Status

CONTROLLERS = ("lfbk", "dmpc-qp", "dmpc-lp")
_COST_OF = {"dmpc-qp": CostKind.SQUARED_TWO_NORM, "dmpc-lp": CostKind.ONE_NORM}

# telemetry status codes
STATUS_NONE = 0  # no optimization (leader, linear feedback)
STATUS_CODES = {None: STATUS_NONE, Status.SOLVED: 1, Status.MAX_ITER: 2,
                Status.PRIMAL_INFEASIBLE: 3, Status.DUAL_INFEASIBLE: 4}
STATUS_NAMES = {0: "none", 1: "solved", 2: "max_iter", 3: "primal_infeasible",
                4: "dual_infeasible"}


@dataclass(frozen=True)
class SpeedProfile:
    """Piecewise-linear reference speed through ``(time, speed)`` breakpoints.

    Held constant before the first and after the last breakpoint.
    """

    times: tuple[float, ...]
    speeds: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        v = tuple(float(x) for x in self.speeds)
        if len(t) != len(v) or not t:
            raise ValueError("profile needs matching, nonempty time and speed lists")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError("profile times must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "speeds", v)

    @classmethod
    def from_levels(cls, levels: Sequence[float], dwell: float, accel: float,
                    lead_in: float = 0.0) -> SpeedProfile:
        """Hold each level for ``dwell`` seconds, ramping between levels at ``accel``.

        The first level is held for ``lead_in`` seconds and the last level is
        reached without a dwell (it is held for the rest of the run).
        """
        if accel <= 0 or dwell < 0 or lead_in < 0:
            raise ValueError("accel must be positive, dwell and lead_in nonnegative")
        t = [0.0]
        v = [float(levels[0])]
        if lead_in > 0:
            t.append(lead_in)
            v.append(v[0])
        for k, level in enumerate(levels[1:], start=1):
            t.append(t[-1] + abs(level - v[-1]) / accel)
            v.append(float(level))
            if k < len(levels) - 1 and dwell > 0:
                t.append(t[-1] + dwell)
                v.append(float(level))
        return cls(tuple(t), tuple(v))

    @property
    def end(self) -> float:
        return self.times[-1]

    @property
    def max_slope(self) -> float:
        slopes = [abs(b - a) / (t1 - t0) for a, b, t0, t1 in
                  zip(self.speeds, self.speeds[1:], self.times, self.times[1:]) if t1 > t0]
        return max(slopes, default=0.0)

    def __call__(self, t):
        return np.interp(t, self.times, self.speeds)


@dataclass(frozen=True)
class Scenario:
    """Everything needed to run one platoon experiment."""

    name: str
    profile: SpeedProfile
    duration: float
    platoon: PlatoonConfig
    noise: NoiseConfig = NoiseConfig()
    controller: str = "dmpc-qp"
    lfbk: LfbkConfig = LfbkConfig()
    dmpc: DmpcConfig = DmpcConfig()
    dmpc_overrides: dict = field(default_factory=dict)  # vehicle -> field dict
    initial_gap: Optional[float] = None
    initial_velocity: Optional[float] = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; "
                             f"choose one of {', '.join(CONTROLLERS)}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        pc = self.platoon
        lo, hi = min(self.profile.speeds), max(self.profile.speeds)
        if lo < pc.v_min[0] or hi > pc.v_max[0]:
            raise ValueError(f"profile speeds [{lo}, {hi}] leave the leader's velocity bounds")
        if self.profile.max_slope > pc.a_max[0] + 1e-12:
            raise ValueError(f"profile slope {self.profile.max_slope:g} m/s^2 exceeds the "
                             f"leader's a_max {pc.a_max[0]:g}")
        if self.initial_gap is not None and not self.initial_gap > 0:
            raise ValueError("initial_gap must be positive")
        for i in self.dmpc_overrides:
            if not 0 <= i < pc.n_vehicles:
                raise ValueError(f"weight override for nonexistent vehicle {i}")

    @property
    def dt(self) -> float:
        return self.platoon.dynamics[0].dt

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def with_controller(self, controller: str) -> Scenario:
        return replace(self, controller=controller)

    def with_followers(self, n: int) -> Scenario:
        pc = self.platoon
        k = n + 1
        platoon = PlatoonConfig(n, pc.d_des, _resize(pc.dynamics, k), _resize(pc.v_min, k),
                                _resize(pc.v_max, k), _resize(pc.a_max, k))
        overrides = {i: o for i, o in self.dmpc_overrides.items() if i < k}
        return replace(self, platoon=platoon, dmpc_overrides=overrides)

    def dmpc_config(self, vehicle: int) -> DmpcConfig:
        """Weights and bounds for one vehicle under the selected DMPC variant."""
        pc = self.platoon
        cost = _COST_OF.get(self.controller, self.dmpc.cost_kind)
        base = replace(self.dmpc, cost_kind=cost, d_des=pc.d_des, v_min=pc.v_min[vehicle],
                       v_max=pc.v_max[vehicle], a_max=pc.a_max[vehicle])
        return replace(base, **self.dmpc_overrides.get(vehicle, {}))

    def stability_report(self):
        return check_stability_conditions([self.dmpc_config(i)
                                           for i in range(self.platoon.n_vehicles)])

    def initial_states(self) -> list[VehicleState]:
        v0 = float(self.profile(0.0)) if self.initial_velocity is None else self.initial_velocity
        gap = self.platoon.d_des if self.initial_gap is None else self.initial_gap
        return [VehicleState(-i * gap, v0) for i in range(self.platoon.n_vehicles)]


def _resize(seq, k):
    seq = list(seq)
    return seq[:k] + [seq[-1]] * max(0, k - len(seq))


@dataclass
class Telemetry:
    """Per-step, per-vehicle record of one trial.

    Row ``k`` holds the state at time ``k*dt``, the input applied during
    step ``k`` and the gap measured at its start. Column 0 is the leader,
    whose gap is NaN. ``final_p``/``final_v`` are the states after the last
    step. ``msg_step[k, i]`` is the step at which the trajectory follower
    ``i`` used during step ``k`` was published (-1: initial assumption).
    """

    scenario: Scenario
    seed: int
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    u: np.ndarray
    gap: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    solve_time: np.ndarray
    final_p: np.ndarray
    final_v: np.ndarray
    msg_step: np.ndarray
    wall_time: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.t.size

    @property
    def fallback(self) -> np.ndarray:
        """True where an optimization did not return a solution."""
        return self.status > STATUS_CODES[Status.SOLVED]

    @property
    def n_solves(self) -> int:
        return int(np.count_nonzero(self.status != STATUS_NONE))


def leader_reference_input(t: float, profile: SpeedProfile, dyn: DynamicsParams) -> float:
    """Commanded leader velocity at time ``t``: the reference one step ahead."""
    return float(profile(t + dyn.dt))


def _leader_plan(x0: VehicleState, t: float, profile: SpeedProfile, dyn: DynamicsParams,
                 H: int) -> Trajectory:
    inputs = profile(t + dyn.dt * np.arange(1, H + 1))
    return rollout(x0, inputs, dyn)


def run_trial(scenario: Scenario, seed: Optional[int] = None,
              settings: Optional[SolverSettings] = None) -> Telemetry:
    """Simulate one trial; ``seed`` overrides the scenario's noise seed."""
    wall0 = time.perf_counter()
    pc = scenario.platoon
    n_veh = pc.n_vehicles
    noise = scenario.noise if seed is None else replace(scenario.noise, seed=int(seed))
    streams = [noise.stream(i) for i in range(n_veh)]
    dyns = pc.dynamics
    T = scenario.n_steps
    dt = scenario.dt
    H = scenario.dmpc.H
    use_dmpc = scenario.controller != "lfbk"

    x = scenario.initial_states()
    if use_dmpc:
        ctrls = [None] + [DmpcController(scenario.dmpc_config(i), dyns[i], x[i], settings)
                          for i in range(1, n_veh)]
    else:
        lf = LinearFeedbackController(scenario.lfbk, pc.d_des)
    # what each vehicle published last, stamped with the step it was made in
    published: list[tuple[int, Trajectory]] = [(-1, init_assumed(x[i], H, dyns[i]))
                                                for i in range(n_veh)]

    shape = (T, n_veh)
    rec_p, rec_v, rec_u = np.empty(shape), np.empty(shape), np.empty(shape)
    rec_gap = np.full(shape, np.nan)
    rec_status = np.zeros(shape, dtype=np.int8)
    rec_iter = np.zeros(shape, dtype=np.int32)
    rec_time = np.zeros(shape)
    rec_msg = np.full(shape, -1, dtype=np.int64)
    times = dt * np.arange(T)

    for k in range(T):
        t = times[k]
        inputs = np.empty(n_veh)
        outbox = [None] * n_veh
        inputs[0] = leader_reference_input(t, scenario.profile, dyns[0])
        if use_dmpc:
            outbox[0] = shift_assumed(_leader_plan(x[0], t, scenario.profile, dyns[0], H), dyns[0])
        for i in range(1, n_veh):
            gap = measure_spacing(x[i - 1].p, x[i].p, streams[i])
            rec_gap[k, i] = gap
            if use_dmpc:
                stamp, msg = published[i - 1]
                rec_msg[k, i] = stamp
                step = ctrls[i].control(x[i], anchor_predecessor(msg, x[i].p, gap))
                inputs[i] = step.u
                outbox[i] = ctrls[i].assumed
                rec_status[k, i] = STATUS_CODES[step.status]
                rec_iter[k, i] = step.iterations
                rec_time[k, i] = step.solve_time
            else:
                inputs[i] = lf.control(x[i], gap, x[i - 1].v)
        for i in range(n_veh):
            rec_p[k, i], rec_v[k, i] = x[i].p, x[i].v
        rec_u[k] = inputs
        if use_dmpc:
            published = [(k, traj) for traj in outbox]
        x = [step_dynamics_noisy(x[i], inputs[i], dyns[i], streams[i]) for i in range(n_veh)]

    return Telemetry(scenario=scenario, seed=noise.seed, t=times, p=rec_p, v=rec_v, u=rec_u,
                     gap=rec_gap, status=rec_status, iterations=rec_iter, solve_time=rec_time,
                     final_p=np.array([s.p for s in x]), final_v=np.array([s.v for s in x]),
                     msg_step=rec_msg, wall_time=time.perf_counter() - wall0)


def trial_seed(base_seed: int, k: int) -> int:
    """64-bit seed of trial ``k``, derived from ``(base_seed, k)`` only."""
    state = np.random.SeedSequence([int(base_seed), int(k)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def _run_indexed(args):
    scenario, seed, settings = args
    return run_trial(scenario, seed, settings)


def run_batch(scenario: Scenario, trials: int, base_seed: int,
              settings: Optional[SolverSettings] = None, order: Optional[Sequence[int]] = None,
              progress=None, jobs: int = 1) -> list[Telemetry]:
    """Run ``trials`` independent trials; result ``k`` always uses ``trial_seed(base_seed, k)``.

    ``order`` permutes the execution order (results are returned by trial
    index regardless); ``progress`` is called with each finished trial index.
    ``jobs > 1`` runs trials in worker processes.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    order = list(range(trials) if order is None else order)
    if sorted(order) != list(range(trials)):
        raise ValueError("order must be a permutation of the trial indices")
    out: list[Optional[Telemetry]] = [None] * trials
    if jobs > 1 and trials > 1:
        from concurrent.futures import ProcessPoolExecutor, as_completed
        with ProcessPoolExecutor(max_workers=min(jobs, trials)) as pool:
            futures = {pool.submit(_run_indexed, (scenario, trial_seed(base_seed, k), settings)): k
                       for k in order}
            for fut in as_completed(futures):
                k = futures[fut]
                out[k] = fut.result()
                if progress is not None:
                    progress(k)
        return out
    for k in order:
        out[k] = run_trial(scenario, trial_seed(base_seed, k), settings)
        if progress is not None:
            progress(k)
    return out
