import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from platoon_bench.model import (DynamicsParams, NoiseConfig, PlatoonConfig, VehicleState,
                                 measure_spacing, step_dynamics, step_dynamics_noisy)

DYN = DynamicsParams(0.1, 0.3)
finite = st.floats(-1e3, 1e3)


@pytest.mark.parametrize("x, u, expected", [
    ((0.0, 3.0), 3.0, (0.3, 3.0)),
    ((0.0, 0.0), 3.0, (0.0, 1.0)),
    ((10.0, 2.0), 0.0, (10.2, 4.0 / 3.0)),
])
def test_step_examples(x, u, expected):
    nxt = step_dynamics(VehicleState(*x), u, DYN)
    assert nxt.p == pytest.approx(expected[0], abs=1e-15)
    assert nxt.v == pytest.approx(expected[1], abs=1e-15)


def test_step_matches_state_space_form():
    x = np.array([1.5, -0.7])
    nxt = step_dynamics(VehicleState(*x), 2.0, DYN)
    np.testing.assert_allclose([nxt.p, nxt.v], DYN.A @ x + DYN.B * 2.0, rtol=0, atol=1e-15)


def test_state_rejects_non_finite():
    with pytest.raises(ValueError):
        VehicleState(math.nan, 0.0)
    with pytest.raises(ValueError):
        VehicleState(0.0, math.inf)


def test_dynamics_params_ratio_checks():
    with pytest.raises(ValueError):
        DynamicsParams(0.6, 0.3)
    with pytest.raises(ValueError):
        DynamicsParams(0.0, 0.3)
    with pytest.warns(UserWarning):
        DynamicsParams(0.4, 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        DynamicsParams(0.1, 0.3)


@given(finite, finite, finite, finite, finite, finite)
def test_step_is_affine(p1, v1, p2, v2, u1, u2):
    a = step_dynamics(VehicleState(p1 + p2, v1 + v2), u1 + u2, DYN)
    b = step_dynamics(VehicleState(p1, v1), u1, DYN)
    c = step_dynamics(VehicleState(p2, v2), u2, DYN)
    z = step_dynamics(VehicleState(0.0, 0.0), 0.0, DYN)
    assert a.p == pytest.approx(b.p + c.p - z.p, abs=1e-9)
    assert a.v == pytest.approx(b.v + c.v - z.v, abs=1e-9)


@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(0.05, 0.3))
def test_velocity_converges_monotonically(v0, u, dt):
    dyn = DynamicsParams(dt, 0.3)
    x = VehicleState(0.0, v0)
    err = abs(v0 - u)
    for _ in range(60):
        x = step_dynamics(x, u, dyn)
        assert abs(x.v - u) <= err + 1e-12
        err = abs(x.v - u)


def test_zero_noise_is_exact():
    stream = NoiseConfig(seed=3).stream(1)
    x = VehicleState(1.25, 2.5)
    assert step_dynamics_noisy(x, 3.0, DYN, stream) == step_dynamics(x, 3.0, DYN)
    assert measure_spacing(6.0, 5.0, stream) == 1.0


def test_noise_streams_are_deterministic_and_distinct():
    cfg = NoiseConfig((0.1, 0.2), 0.05, seed=42)
    s1, s2 = cfg.stream(2), cfg.stream(2)
    seq1 = [s1.dynamics() for _ in range(20)] + [s1.sensing() for _ in range(5)]
    seq2 = [s2.dynamics() for _ in range(20)] + [s2.sensing() for _ in range(5)]
    assert seq1 == seq2
    other = cfg.stream(3)
    assert [other.dynamics() for _ in range(20)] != seq1[:20]


def test_sensing_draws_do_not_shift_dynamics_draws():
    cfg = NoiseConfig((0.1, 0.1), 0.05, seed=5)
    s1, s2 = cfg.stream(1), cfg.stream(1)
    d1 = [s1.dynamics() for _ in range(10)]
    d2 = []
    for _ in range(10):
        s2.sensing()
        d2.append(s2.dynamics())
    assert d1 == d2


def test_dynamics_noise_std_monte_carlo():
    cfg = NoiseConfig((0.5477, 0.2), 0.0, seed=9)
    stream = cfg.stream(1)
    x = VehicleState(0.0, 0.0)
    base = step_dynamics(x, 1.0, DYN)
    draws = np.array([(lambda n: (n.p - base.p, n.v - base.v))(
        step_dynamics_noisy(x, 1.0, DYN, stream)) for _ in range(100_000)])
    assert draws[:, 0].std() == pytest.approx(0.5477, rel=0.03)
    assert draws[:, 1].std() == pytest.approx(0.2, rel=0.03)
    assert abs(np.corrcoef(draws.T)[0, 1]) < 0.02


def test_sensing_noise_std_monte_carlo():
    stream = NoiseConfig(sensing_std=0.045, seed=1).stream(4)
    gaps = np.array([measure_spacing(6.0, 5.0, stream) for _ in range(100_000)])
    assert gaps.std() == pytest.approx(0.045, rel=0.03)
    assert gaps.mean() == pytest.approx(1.0, abs=1e-3)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig((-0.1, 0.0))
    with pytest.raises(ValueError):
        NoiseConfig(sensing_std=-1.0)
    with pytest.raises(ValueError):
        NoiseConfig(seed=2**64)
    with pytest.raises(ValueError):
        NoiseConfig((0.1, 0.1, 0.1))


def test_platoon_config_shape_and_bounds():
    pc = PlatoonConfig.uniform(3, 1.0)
    assert pc.n_vehicles == 4 and len(pc.dynamics) == 4
    with pytest.raises(ValueError):
        PlatoonConfig.uniform(0, 1.0)
    with pytest.raises(ValueError):
        PlatoonConfig.uniform(2, 0.0)
    with pytest.raises(ValueError):
        PlatoonConfig.uniform(2, 1.0, v_min=5.0, v_max=4.0)
    with pytest.raises(ValueError):
        PlatoonConfig(2, 1.0, [DYN] * 2, [0.0] * 3, [1.0] * 3, [1.0] * 3)
