import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from platoon_bench.controllers import (CostKind, DmpcConfig, DmpcController,
                                       DmpcControllerState, DmpcSolver, LfbkConfig, Trajectory,
                                       check_stability_conditions, dmpc_control, init_assumed,
                                       lfbk_control, rollout, shift_assumed, transcribe_dmpc)
from platoon_bench.model import DynamicsParams, VehicleState
from platoon_bench.solver import Status, solve
from platoon_bench.solver.oracle import active_set_qp

DYN = DynamicsParams(0.1, 0.3)
QP = CostKind.SQUARED_TWO_NORM
LP = CostKind.ONE_NORM


def const_traj(p0, v, H, dyn=DYN):
    return init_assumed(VehicleState(p0, v), H, dyn)


# -- linear feedback ----------------------------------------------------------

@pytest.mark.parametrize("gap, v_pred, v_ego, expected", [
    (1.0, 2.0, 2.0, 2.0),
    (2.0, 2.0, 2.0, 3.0),
    (1.0, 3.0, 2.0, 4.0),
])
def test_lfbk_examples(gap, v_pred, v_ego, expected):
    u = lfbk_control(VehicleState(0.0, v_ego), gap, v_pred, LfbkConfig(1.0, 2.0), 1.0)
    assert u == pytest.approx(expected, abs=1e-15)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 30))
def test_lfbk_affine_in_errors(e_gap, e_vel, v):
    cfg = LfbkConfig(1.0, 2.0)
    ego = VehicleState(0.0, v)
    assert lfbk_control(ego, 5.0, v, cfg, 5.0) == v
    u = lfbk_control(ego, 5.0 + e_gap, v + e_vel, cfg, 5.0)
    assert u == pytest.approx(v + e_gap + 2.0 * e_vel, abs=1e-9)


def test_lfbk_rejects_nonpositive_gains():
    with pytest.raises(ValueError):
        LfbkConfig(0.0, 1.0)


# -- trajectories ---------------------------------------------------------------

def test_init_assumed_examples():
    t = init_assumed(VehicleState(0.0, 2.0), 3, DYN)
    np.testing.assert_allclose(t.x, [[0, 2], [0.2, 2], [0.4, 2], [0.6, 2]], atol=1e-15)
    z = init_assumed(VehicleState(0.0, 0.0), 4, DYN)
    assert not z.x.any() and not z.u.any()
    assert t.dynamics_residual(DYN) < 1e-15


def test_shift_constant_velocity_plan():
    plan = const_traj(0.0, 2.0, 5)
    once = shift_assumed(plan, DYN)
    np.testing.assert_allclose(once.x[:, 0], plan.x[:, 0] + 0.2, atol=1e-12)
    np.testing.assert_allclose(once.x[:, 1], 2.0)
    twice = shift_assumed(once, DYN)
    np.testing.assert_allclose(twice.x[:, 0], plan.x[:, 0] + 0.4, atol=1e-12)
    np.testing.assert_allclose(twice.u, plan.u)


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 30), min_size=2, max_size=12), st.floats(-50, 50),
       st.floats(-5, 30))
def test_shift_keeps_dynamics_and_terminal_velocity(inputs, p0, v0):
    plan = rollout(VehicleState(p0, v0), inputs, DYN)
    shifted = shift_assumed(plan, DYN)
    assert shifted.horizon == plan.horizon
    np.testing.assert_allclose(shifted.x[:-1], plan.x[1:])
    np.testing.assert_allclose(shifted.u[:-1], plan.u[1:])
    assert shifted.x[-1, 1] == pytest.approx(plan.x[-1, 1], abs=1e-12)
    assert shifted.dynamics_residual(DYN) < 1e-9


def test_trajectory_shape_checks():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros(3))


# -- transcription ---------------------------------------------------------------

def fixture_state(H, v=2.0, d=1.0, gap_error=0.0):
    ego = VehicleState(0.0, v)
    own = const_traj(0.0, v, H)
    pred = const_traj(d + gap_error, v, H)
    return ego, DmpcControllerState(own, pred)


@pytest.mark.parametrize("kind", [QP, LP])
def test_transcription_sizes_h2(kind):
    cfg = DmpcConfig(cost_kind=kind, H=2, d_des=1.0)
    ego, ctrl = fixture_state(2)
    prob = transcribe_dmpc(ego, ctrl, cfg, DYN)
    n_base = 2 * 3 + 2
    assert n_base == 8
    eq = np.flatnonzero(prob.l == prob.u)
    # 2 initial + 4 dynamics + 2 terminal state + 1 terminal input
    assert eq[:9].tolist() == list(range(9))
    base_rows = 9 + 2 * 2
    if kind is QP:
        assert prob.n == 8 and prob.m == base_rows and eq.size == 9
    else:
        assert prob.n == 8 + 5 * 2 and prob.m == base_rows + 2 * 5 * 2
        assert prob.P.nnz == 0


def test_transcription_rejects_horizon_mismatch():
    cfg = DmpcConfig(H=3, d_des=1.0)
    ego, ctrl = fixture_state(2)
    with pytest.raises(ValueError):
        transcribe_dmpc(ego, ctrl, cfg, DYN)


@pytest.mark.parametrize("kind", [QP, LP])
def test_zero_error_fixture(kind):
    cfg = DmpcConfig(cost_kind=kind, H=10, d_des=1.0)
    ego, ctrl = fixture_state(10)
    prob = transcribe_dmpc(ego, ctrl, cfg, DYN)
    sol = solve(prob)
    assert sol.status is Status.SOLVED
    assert sol.objective == pytest.approx(0.0, abs=1e-6)
    step = dmpc_control(ego, ctrl, cfg, DYN)
    assert step.u == pytest.approx(2.0, abs=1e-6) and not step.fallback


def test_small_quadratic_matches_active_set_oracle():
    # H=4 is the shortest horizon whose equalities leave a free direction
    cfg = DmpcConfig(cost_kind=QP, H=4, d_des=1.0, v_max=35.0, a_max=50.0)
    ego = VehicleState(0.0, 2.0)
    own = rollout(ego, [2.5, 3.0, 3.0, 3.0], DYN)
    pred = rollout(VehicleState(1.3, 2.2), [2.4, 2.6, 2.6, 2.6], DYN)
    prob = transcribe_dmpc(ego, DmpcControllerState(own, pred), cfg, DYN)
    z_ref, _, obj_ref = active_set_qp(prob)
    sol = solve(prob)
    assert sol.objective == pytest.approx(obj_ref, abs=1e-8)
    np.testing.assert_allclose(sol.z, z_ref, atol=1e-6)


def test_h2_problem_pins_a_single_plan():
    # 9 equality rows on 8 variables: only a reachable terminal state is feasible
    cfg = DmpcConfig(cost_kind=QP, H=2, d_des=1.0, a_max=50.0)
    ego = VehicleState(0.0, 2.0)
    reach = rollout(ego, [3.0, ego.v * (1 - DYN.dt / DYN.tau) + 3.0 * DYN.dt / DYN.tau], DYN)
    pred = reach.offset(1.0)
    step = dmpc_control(ego, DmpcControllerState(const_traj(0.0, 2.0, 2), pred), cfg, DYN)
    assert step.status is Status.SOLVED
    np.testing.assert_allclose(step.plan.u, reach.u, atol=1e-6)
    far = pred.offset(0.5)
    bad = dmpc_control(ego, DmpcControllerState(const_traj(0.0, 2.0, 2), far), cfg, DYN)
    assert bad.fallback


def cvxpy_plan(ego, own, pred, cfg, dyn):
    """The optimization problem written directly from its definition."""
    cp = pytest.importorskip("cvxpy")
    H = cfg.H
    x = cp.Variable((H + 1, 2))
    u = cp.Variable(H)
    dd = np.array([cfg.d_des, 0.0])
    cons = [x[0] == ego.as_array()]
    cons += [x[k + 1] == dyn.A @ x[k] + dyn.B * u[k] for k in range(H)]
    cons += [cp.abs(x[1:, 1] - x[:-1, 1]) <= dyn.dt * cfg.a_max,
             x[1:, 1] >= cfg.v_min, x[1:, 1] <= cfg.v_max,
             x[H] == pred.x[H] - dd, u[H - 1] == pred.x[H, 1]]
    if cfg.cost_kind is QP:
        cost = (cp.sum_squares(x[:H] - own.x[:H]) + cp.sum_squares(x[:H] - pred.x[:H] + dd)
                + cp.sum_squares(u - ego.v))
    else:
        cost = (cp.sum(cp.abs(x[:H] - own.x[:H])) + cp.sum(cp.abs(x[:H] - pred.x[:H] + dd))
                + cp.sum(cp.abs(u - ego.v)))
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, u.value


@pytest.mark.parametrize("kind", [QP, LP])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_transcription_matches_direct_formulation(kind, seed):
    rng = np.random.default_rng(seed)
    H = 20
    cfg = DmpcConfig(cost_kind=kind, H=H, d_des=5.0, a_max=3.0)
    ego = VehicleState(0.0, 20.0 + rng.normal())
    own = rollout(ego, 20.0 + rng.normal(0, 0.5, H), DYN)
    pred = rollout(VehicleState(5.0 + rng.normal(0, 0.5), 21.0), 21.0 + rng.normal(0, 0.3, H), DYN)
    prob = transcribe_dmpc(ego, DmpcControllerState(own, pred), cfg, DYN)
    sol = solve(prob)
    ref_obj, ref_u = cvxpy_plan(ego, own, pred, cfg, DYN)
    assert sol.status is Status.SOLVED
    assert sol.objective == pytest.approx(ref_obj, abs=1e-5 * (1 + abs(ref_obj)))
    if kind is QP:  # strictly convex: the plan itself is unique
        np.testing.assert_allclose(sol.z[2 * (H + 1):], ref_u, atol=1e-4)


def test_closing_behavior():
    H = 100
    cfg = DmpcConfig(cost_kind=QP, H=H, d_des=5.0)
    ego = VehicleState(0.0, 20.0)
    pred = const_traj(10.0, 25.0, H)
    step = dmpc_control(ego, DmpcControllerState(const_traj(0.0, 20.0, H), pred), cfg, DYN)
    assert step.status is Status.SOLVED
    assert step.u > 20.0


@pytest.mark.parametrize("kind", [QP, LP])
def test_solved_plan_meets_terminal_constraints(kind):
    H = 30
    cfg = DmpcConfig(cost_kind=kind, H=H, d_des=5.0)
    ego = VehicleState(0.0, 20.0)
    pred = rollout(VehicleState(6.0, 21.0), np.linspace(21, 22, H), DYN)
    step = dmpc_control(ego, DmpcControllerState(const_traj(0.0, 20.0, H), pred), cfg, DYN)
    assert step.status is Status.SOLVED
    np.testing.assert_allclose(step.plan.x[H], pred.x[H] - [5.0, 0.0], atol=1e-5)
    assert step.plan.u[H - 1] == pytest.approx(pred.x[H, 1], abs=1e-5)
    assert step.plan.dynamics_residual(DYN) < 1e-5
    assert np.all(np.abs(np.diff(step.plan.x[:, 1])) <= DYN.dt * cfg.a_max + 1e-5)


def test_infeasible_step_falls_back():
    H = 5
    cfg = DmpcConfig(cost_kind=QP, H=H, d_des=5.0, a_max=1.0)
    ego = VehicleState(0.0, 20.0)
    # the predecessor's terminal speed is out of reach within 0.5 s at 1 m/s^2
    pred = const_traj(5.0, 30.0, H)
    step = dmpc_control(ego, DmpcControllerState(const_traj(0.0, 20.0, H), pred), cfg, DYN)
    assert step.fallback and step.status is Status.PRIMAL_INFEASIBLE
    assert step.u == 20.0


def test_fallback_walks_along_previous_plan():
    H = 10
    cfg = DmpcConfig(cost_kind=QP, H=H, d_des=5.0, a_max=1.0)
    ctrl = DmpcController(cfg, DYN, VehicleState(0.0, 20.0))
    ok = ctrl.control(VehicleState(0.0, 20.0), rollout(VehicleState(5.0, 20.0),
                                                       np.linspace(20, 20.5, H), DYN))
    assert not ok.fallback
    bad_pred = const_traj(5.0, 40.0, H)
    first = ctrl.control(VehicleState(2.0, 20.0), bad_pred)
    second = ctrl.control(VehicleState(4.0, 20.0), bad_pred)
    assert first.fallback and second.fallback
    assert first.u == pytest.approx(ok.plan.u[1])
    assert second.u == pytest.approx(ok.plan.u[2])


@pytest.mark.parametrize("kind", [QP, LP])
def test_warm_started_sequence_matches_cold_solves(kind):
    H = 40
    cfg = DmpcConfig(cost_kind=kind, H=H, d_des=5.0)
    rng = np.random.default_rng(3)
    warm = DmpcSolver()
    ego = VehicleState(0.0, 20.0)
    own = const_traj(0.0, 20.0, H)
    for k in range(8):
        pred = rollout(VehicleState(ego.p + 5.0 + rng.normal(0, 0.2), 20.5),
                       np.full(H, 20.5) + 0.1 * np.sin(k + np.arange(H)), DYN)
        ctrl = DmpcControllerState(own, pred)
        a = dmpc_control(ego, ctrl, cfg, DYN, warm)
        b = dmpc_control(ego, ctrl, cfg, DYN, DmpcSolver())
        assert a.status is b.status is Status.SOLVED
        assert a.cost == pytest.approx(b.cost, abs=1e-6 * (1 + abs(b.cost)))
        if kind is QP:
            assert a.u == pytest.approx(b.u, abs=1e-5)
        own = shift_assumed(a.plan, DYN)
        ego = VehicleState(a.plan.x[1, 0] + 0.01, a.plan.x[1, 1])


# -- stability conditions ---------------------------------------------------------

def test_identity_weights_satisfy_conditions():
    rep = check_stability_conditions([DmpcConfig()] * 4)
    assert rep.satisfied and len(rep.pairs) == 3
    assert rep.caveat is not None
    rep1 = check_stability_conditions([DmpcConfig(cost_kind=LP)] * 4)
    assert rep1.satisfied and rep1.caveat is None


def test_weakened_move_suppression_is_flagged():
    cfgs = [DmpcConfig()] * 4
    cfgs[2] = DmpcConfig(F=0.5 * np.eye(2))
    rep = check_stability_conditions(cfgs)
    assert not rep.satisfied
    [bad] = rep.violations
    assert (bad.vehicle, bad.follower) == (2, 3)
    assert bad.margin == pytest.approx(-0.5)


def test_one_norm_condition():
    cfgs = [DmpcConfig(cost_kind=LP)] * 3
    cfgs[1] = DmpcConfig(cost_kind=LP, s=0.5)
    rep = check_stability_conditions(cfgs)
    assert [(p.vehicle, p.follower) for p in rep.violations] == [(1, 2)]


def test_mixed_cost_kinds_rejected():
    with pytest.raises(ValueError):
        check_stability_conditions([DmpcConfig(), DmpcConfig(cost_kind=LP)])


def test_config_validation():
    with pytest.raises(ValueError):
        DmpcConfig(F=-np.eye(2))
    with pytest.raises(ValueError):
        DmpcConfig(H=1)
    with pytest.raises(ValueError):
        DmpcConfig(cost_kind=LP, s=0.0)
