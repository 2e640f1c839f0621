"""Vehicle state, first-order longitudinal dynamics and noise models."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# substream tags, mixed into the seed sequence next to the vehicle index
_DYNAMICS_STREAM = 0
_SENSING_STREAM = 1


@dataclass(frozen=True)
class VehicleState:
    """Longitudinal state: position ``p`` [m] and velocity ``v`` [m/s]."""

    p: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.v)):
            raise ValueError(f"non-finite vehicle state ({self.p}, {self.v})")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v])

    def __add__(self, other: VehicleState) -> VehicleState:
        return VehicleState(self.p + other.p, self.v + other.v)

    def __sub__(self, other: VehicleState) -> VehicleState:
        return VehicleState(self.p - other.p, self.v - other.v)


@dataclass(frozen=True)
class DynamicsParams:
    """Discretization step ``dt`` and inertial delay ``tau`` (both seconds).

    The velocity subsystem has pole ``1 - dt/tau``; ``dt/tau >= 2`` makes it
    unstable and is rejected, ``dt/tau > 1`` makes it oscillate and warns.
    """

    dt: float = 0.1
    tau: float = 0.3

    def __post_init__(self):
        if not (self.dt > 0 and self.tau > 0):
            raise ValueError(f"dt and tau must be positive, got dt={self.dt}, tau={self.tau}")
        ratio = self.dt / self.tau
        if ratio >= 2:
            raise ValueError(f"dt/tau = {ratio:g} >= 2 gives unstable velocity dynamics")
        if ratio > 1:
            warnings.warn(f"dt/tau = {ratio:g} > 1: velocity response oscillates", stacklevel=2)

    @property
    def A(self) -> np.ndarray:
        return np.array([[1.0, self.dt], [0.0, 1.0 - self.dt / self.tau]])

    @property
    def B(self) -> np.ndarray:
        return np.array([0.0, self.dt / self.tau])


def step_dynamics(x: VehicleState, u: float, params: DynamicsParams) -> VehicleState:
    """Advance one step; ``u`` is the commanded (desired) velocity."""
    gain = params.dt / params.tau
    return VehicleState(x.p + params.dt * x.v, x.v * (1.0 - gain) + gain * u)


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian noise levels and the master seed.

    ``dynamics_std`` is the (position, velocity) standard deviation of the
    additive term applied to the post-step state; ``sensing_std`` corrupts the
    measured gap to the predecessor.
    """

    dynamics_std: tuple[float, float] = (0.0, 0.0)
    sensing_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        std = tuple(float(s) for s in self.dynamics_std)
        if len(std) != 2:
            raise ValueError("dynamics_std needs one entry per state (position, velocity)")
        object.__setattr__(self, "dynamics_std", std)
        if min(std) < 0 or self.sensing_std < 0:
            raise ValueError("noise standard deviations must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def is_zero(self) -> bool:
        return self.sensing_std == 0 and not any(self.dynamics_std)

    def stream(self, vehicle: int) -> NoiseStream:
        """Independent noise substream for one vehicle.

        Derived from ``(seed, vehicle)`` alone, so draws do not depend on the
        order in which vehicles are stepped.
        """
        def rng(tag):
            return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(self.seed), vehicle, tag])))

        return NoiseStream(rng(_DYNAMICS_STREAM), rng(_SENSING_STREAM),
                           self.dynamics_std, self.sensing_std)


class NoiseStream:
    """Per-vehicle source of dynamics and sensing noise.

    Dynamics and sensing draw from separate generators and always consume one
    draw per call, even at zero standard deviation, so toggling one noise
    source never shifts the other's sequence.
    """

    def __init__(self, dynamics_rng, sensing_rng, dynamics_std=(0.0, 0.0), sensing_std=0.0):
        self.dynamics_rng = dynamics_rng
        self.sensing_rng = sensing_rng
        self.dynamics_std = tuple(dynamics_std)
        self.sensing_std = sensing_std

    def dynamics(self) -> tuple[float, float]:
        w = self.dynamics_rng.standard_normal(2)
        return self.dynamics_std[0] * w[0], self.dynamics_std[1] * w[1]

    def sensing(self) -> float:
        return self.sensing_std * self.sensing_rng.standard_normal()


def step_dynamics_noisy(x: VehicleState, u: float, params: DynamicsParams,
                        noise_stream: NoiseStream) -> VehicleState:
    nxt = step_dynamics(x, u, params)
    wp, wv = noise_stream.dynamics()
    if wp == 0.0 and wv == 0.0:
        return nxt
    return VehicleState(nxt.p + wp, nxt.v + wv)


def measure_spacing(p_pred: float, p_ego: float, noise_stream: NoiseStream) -> float:
    """Measured gap to the predecessor, ``p_pred - p_ego`` plus sensor noise."""
    w = noise_stream.sensing()
    gap = p_pred - p_ego
    return gap + w if w != 0.0 else gap


@dataclass(frozen=True)
class PlatoonConfig:
    """Physical description of a platoon of ``n_followers + 1`` vehicles.

    Vehicle 0 is the leader. Per-vehicle sequences must have length
    ``n_followers + 1``.
    """

    n_followers: int
    d_des: float
    dynamics: Sequence[DynamicsParams]
    v_min: Sequence[float]
    v_max: Sequence[float]
    a_max: Sequence[float]
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n_followers < 1:
            raise ValueError("a platoon needs at least one follower")
        if not self.d_des > 0:
            raise ValueError("desired spacing must be positive")
        n = self.n_vehicles
        for name in ("dynamics", "v_min", "v_max", "a_max"):
            seq = tuple(getattr(self, name))
            if len(seq) != n:
                raise ValueError(f"{name} has {len(seq)} entries, expected {n}")
            object.__setattr__(self, name, seq)
        for i in range(n):
            if not self.v_min[i] < self.v_max[i]:
                raise ValueError(f"vehicle {i}: v_min must be below v_max")
            if not self.a_max[i] > 0:
                raise ValueError(f"vehicle {i}: a_max must be positive")

    @property
    def n_vehicles(self) -> int:
        return self.n_followers + 1

    @classmethod
    def uniform(cls, n_followers, d_des, dt=0.1, tau=0.3, v_min=0.0, v_max=35.0, a_max=3.0):
        n = n_followers + 1
        dyn = DynamicsParams(dt, tau)
        return cls(n_followers, d_des, [dyn] * n, [v_min] * n, [v_max] * n, [a_max] * n)
