"""Kinematic bicycle integration and the boost-energy reservoir.

State is (x, y, phi, v); inputs are longitudinal acceleration and steering
angle. Forward-Euler at a fixed dt keeps runs bit-deterministic. The boost
reservoir is a per-lap time budget: while draining, the speed cap rises by
u_boost; an empty reservoir forces the cap back to v_max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

TWO_PI = 2.0 * math.pi


def wrap_angle(phi: float) -> float:
    """Normalize an angle to (-pi, pi]; exact for angles already in range."""
    if -math.pi < phi <= math.pi:
        return phi
    phi = phi % TWO_PI
    if phi > math.pi:
        phi -= TWO_PI
    return phi


@dataclass(frozen=True)
class VehicleState:
    x: float        # [m]
    y: float        # [m]
    phi: float      # [rad], normalized to (-pi, pi]
    v: float        # [m/s], never negative


@dataclass(frozen=True)
class Command:
    a: float        # [m/s^2]
    delta: float    # [rad]


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 3.0          # [m] L in the steering kinematics
    car_length: float = 4.9         # [m] full body length, used by footprints and guides
    car_width: float = 1.9          # [m]
    a_min: float = -12.0            # [m/s^2]
    a_max: float = 6.0              # [m/s^2]
    delta_min: float = -0.35        # [rad]
    delta_max: float = 0.35         # [rad]
    v_max: float = 75.0             # [m/s] unboosted top speed
    u_boost: float = 10.0           # [m/s] extra allowance while boost drains

    def __post_init__(self):
        if self.wheelbase <= 0 or self.car_length <= 0 or self.car_width <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("acceleration limits must straddle zero")
        if not self.delta_min < 0 < self.delta_max:
            raise ValueError("steering limits must straddle zero")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True)
class AemsReservoir:
    budget: float = 20.0            # [s] remaining boost time
    per_lap_grant: float = 20.0     # [s] refilled on each lap completion
    drain_active: bool = False

    def __post_init__(self):
        if self.budget < 0 or self.per_lap_grant < 0:
            raise ValueError("reservoir times must be non-negative")


def clamp_command(cmd: Command, params: VehicleParams) -> Command:
    a = min(max(cmd.a, params.a_min), params.a_max)
    delta = min(max(cmd.delta, params.delta_min), params.delta_max)
    if a == cmd.a and delta == cmd.delta:
        return cmd
    return Command(a=a, delta=delta)


def step(state: VehicleState, cmd: Command, dt: float, params: VehicleParams,
         v_cap: float | None = None) -> VehicleState:
    """One forward-Euler step of the kinematic bicycle.

    x' = x + v cos(phi) dt        y' = y + v sin(phi) dt
    phi' = phi + v tan(delta)/L dt
    v' = clip(v + a dt, 0, v_cap)

    v_cap defaults to the unboosted top speed; pass speed_limit(...) to honor
    flags and boost.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cap = params.v_max if v_cap is None else v_cap
    v = state.v
    x = state.x + v * math.cos(state.phi) * dt
    y = state.y + v * math.sin(state.phi) * dt
    phi = wrap_angle(state.phi + v * math.tan(cmd.delta) / params.wheelbase * dt)
    v_new = v + cmd.a * dt
    if v_new < 0.0:
        v_new = 0.0
    elif v_new > cap:
        v_new = cap
    return VehicleState(x=x, y=y, phi=phi, v=v_new)


def aems_drain(res: AemsReservoir, dt: float) -> AemsReservoir:
    """Drain the reservoir by dt while active; floor at zero."""
    if not res.drain_active or res.budget <= 0.0:
        return res
    budget = res.budget - dt
    if budget <= 0.0:
        return replace(res, budget=0.0, drain_active=False)
    return replace(res, budget=budget)


def aems_lap_reset(res: AemsReservoir) -> AemsReservoir:
    """Refill to the per-lap grant at a lap boundary."""
    return replace(res, budget=res.per_lap_grant)


def speed_limit(params: VehicleParams, res: AemsReservoir, flag_limit: float) -> float:
    """Current speed cap: flag limit vs. top speed plus any active boost."""
    boost = params.u_boost if (res.drain_active and res.budget > 0.0) else 0.0
    return min(flag_limit, params.v_max + boost)
