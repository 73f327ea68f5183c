"""Vehicle kinematics, lumped longitudinal dynamics and energy accounting.

All operations are pure: they take value objects and return new ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class VehicleState:
    s: float  # longitudinal position [m]
    v: float  # longitudinal speed [m/s]
    l: float = 0.0  # lateral position [m]

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.v, self.l])


@dataclass(frozen=True)
class ControlInput:
    a: float  # longitudinal acceleration [m/s^2]
    v_l: float = 0.0  # lateral velocity [m/s]


@dataclass(frozen=True)
class PowertrainParams:
    """Saturation lines, actuation delay and the lumped resistance
    rho(v) = rho_c0 + rho_c2 * v**2 (per unit mass)."""

    u_s_min: float = -6.0
    u_s_max: float = 3.0
    m1: float = -0.06
    b1: float = 4.2
    m2: float = -0.12
    b2: float = 6.0
    iota: float = 0.6
    rho_c0: float = 0.0147
    rho_c2: float = 2.75e-4

    def __post_init__(self):
        if not self.u_s_min < 0.0 < self.u_s_max:
            raise ValueError("need u_s_min < 0 < u_s_max")
        if self.iota < 0.0:
            raise ValueError("delay iota must be nonnegative")
        if self.rho_c0 <= 0.0 or self.rho_c2 <= 0.0:
            raise ValueError("resistance coefficients must be positive")

    def delay_steps(self, dt: float) -> int:
        """Number of simulation steps spanned by the delay; must be integral."""
        return delay_steps(self.iota, dt)


def delay_steps(iota: float, dt: float) -> int:
    ratio = iota / dt
    q = int(round(ratio))
    if abs(ratio - q) > 1e-9:
        raise ValueError(
            f"delay iota={iota} is not an integer multiple of dt={dt} "
            "(q = iota/dt must be an integer)"
        )
    return q


# Delay buffer: tuple of pending commands u_s, oldest first.
DelayBuffer = Tuple[float, ...]


def make_buffer(q: int, fill: float = 0.0) -> DelayBuffer:
    return (float(fill),) * q


def step_kinematics(state: VehicleState, u: ControlInput, dt: float) -> VehicleState:
    """One exact step of the double-integrator longitudinal / single-integrator
    lateral model."""
    return VehicleState(
        s=state.s + state.v * dt + 0.5 * u.a * dt * dt,
        v=state.v + u.a * dt,
        l=state.l + u.v_l * dt,
    )


def resistance(v, params: PowertrainParams):
    return params.rho_c0 + params.rho_c2 * np.square(v)


def max_accel(v, params: PowertrainParams):
    """Speed-dependent upper acceleration limit (power/torque lines)."""
    return np.minimum(
        params.u_s_max,
        np.minimum(params.m1 * v + params.b1, params.m2 * v + params.b2),
    )


def saturate(u_s, v, params: PowertrainParams):
    return np.minimum(np.maximum(u_s, params.u_s_min), max_accel(v, params))


def step_longitudinal(
    state: VehicleState,
    buffer: DelayBuffer,
    desired_accel: float,
    params: PowertrainParams,
    dt: float,
) -> Tuple[VehicleState, DelayBuffer, float]:
    """Advance the ego through the delayed, saturated powertrain.

    The command sent now is ``rho(v) + desired_accel``; the command executed now
    is the one sent ``q`` steps ago, while resistance and saturation act on the
    current speed. With ``q == 0`` the command acts immediately.
    """
    u_now = float(resistance(state.v, params)) + desired_accel
    if buffer:
        u_exec = buffer[0]
        buffer = buffer[1:] + (u_now,)
    else:
        u_exec = u_now
    a = -float(resistance(state.v, params)) + float(saturate(u_exec, state.v, params))
    return step_kinematics(state, ControlInput(a, 0.0), dt), buffer, a


@dataclass(frozen=True)
class EnergyAccumulator:
    w: float = 0.0  # J/kg
    t: float = 0.0


def energy_rate(v, a, params: PowertrainParams):
    """Traction power per unit mass; braking neither costs nor recovers."""
    return v * np.maximum(a + resistance(v, params), 0.0)


def accumulate_energy(
    acc: EnergyAccumulator, v: float, a: float, params: PowertrainParams, dt: float
) -> EnergyAccumulator:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return EnergyAccumulator(
        w=acc.w + float(energy_rate(v, a, params)) * dt, t=acc.t + dt
    )


def trajectory_energy(v, a, params: PowertrainParams, dt: float) -> float:
    """Left-endpoint energy integral over sampled speed/acceleration arrays."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    total = 0.0
    for vk, ak in zip(v, a):
        total += float(energy_rate(vk, ak, params)) * dt
    return total


@dataclass(frozen=True)
class TrafficState:
    """All vehicles keyed by their scenario number (0 = ego, 1 = cut-in,
    2 and 3 = slow traffic), plus the simulation step index."""

    vehicles: dict
    step: int = 0

    def __getitem__(self, idx: int) -> VehicleState:
        return self.vehicles[idx]

    def __contains__(self, idx: int) -> bool:
        return idx in self.vehicles

    def indices(self):
        return sorted(self.vehicles)

    def with_vehicle(self, idx: int, state: VehicleState) -> "TrafficState":
        vehicles = dict(self.vehicles)
        vehicles[idx] = state
        return TrafficState(vehicles, self.step)
