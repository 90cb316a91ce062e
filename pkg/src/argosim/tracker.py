"""Receding-horizon path tracking over the kinematic bicycle model.

The tracker minimizes a quadratic cost (state error, terminal error, input
magnitude, input rate) over a short horizon by iterative linearization: roll
out the current command sequence, linearize the dynamics around it, solve
the box-constrained quadratic subproblem by projected coordinate descent,
and accept the step only if the true nonlinear cost decreases. Dependency
free and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .planner import PlannerOutput
from .track import Raceline, closest_on
from .vehicle import Command, VehicleParams, VehicleState, wrap_angle

# coordinate-descent settings; fixed so identical inputs give identical output
_MAX_SWEEPS = 30
_SWEEP_TOL = 1e-5
_BACKTRACK_SCALES = (1.0, 0.5, 0.25, 0.125)


@dataclass(frozen=True)
class TrackerConfig:
    horizon_steps: int = 10
    dt: float = 0.1                 # [s] prediction step, may differ from sim dt
    q_state: tuple[float, float, float, float] = (8.0, 8.0, 50.0, 5.0)
    q_terminal: tuple[float, float, float, float] = (16.0, 16.0, 100.0, 10.0)
    r_input: tuple[float, float] = (0.05, 2.0)
    r_rate: tuple[float, float] = (0.5, 30.0)
    max_iterations: int = 3

    def __post_init__(self):
        if self.horizon_steps < 2:
            raise ValueError("horizon must be at least 2 steps")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_iterations < 1:
            raise ValueError("need at least one solver iteration")
        for w in (*self.q_state, *self.q_terminal, *self.r_input, *self.r_rate):
            if w < 0:
                raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class ReferenceWindow:
    """Reference states (x, y, phi, v), one row per horizon step plus one."""
    states: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4 or arr.shape[0] < 2:
            raise ValueError("reference window must be (N>=2, 4)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("reference window must be finite")
        object.__setattr__(self, "states", arr)


@dataclass(frozen=True)
class MpcSolution:
    commands: tuple[Command, ...]
    predicted: tuple[VehicleState, ...]
    cost: float


def extract_reference(trajectory, state: VehicleState, config: TrackerConfig) -> ReferenceWindow:
    """Window of horizon+1 reference states ahead of the car.

    Starts at the car's projection onto the active trajectory and advances
    by reference speed times dt per step. Plans clamp at their final point;
    the raceline wraps. Headings come from finite differences of the
    sampled points, holding the last defined heading through zero-length
    steps (stationary reference, clamped plan end).
    """
    n = config.horizon_steps + 1
    if isinstance(trajectory, Raceline):
        _, arc = closest_on(trajectory, (state.x, state.y))
        xs, ys, vs = [], [], []
        for _ in range(n):
            px, py = trajectory.point_at(arc)
            v = trajectory.speed_at(arc)
            xs.append(px)
            ys.append(py)
            vs.append(v)
            arc += v * config.dt
    elif isinstance(trajectory, PlannerOutput):
        if len(trajectory) < 2:
            raise ValueError("trajectory too short to track")
        pts = np.column_stack([trajectory.xs, trajectory.ys])
        cum = np.concatenate(([0.0], np.cumsum(np.hypot(np.diff(trajectory.xs),
                                                        np.diff(trajectory.ys)))))
        _, arc = closest_on(pts, (state.x, state.y))
        end = float(cum[-1])
        xs, ys, vs = [], [], []
        for _ in range(n):
            s = min(arc, end)
            xs.append(float(np.interp(s, cum, trajectory.xs)))
            ys.append(float(np.interp(s, cum, trajectory.ys)))
            v = float(np.interp(s, cum, trajectory.vs))
            vs.append(v)
            arc = s + v * config.dt
    else:
        raise ValueError("trajectory must be a raceline or a planner output")

    phis, prev = [], state.phi
    for k in range(n):
        if k < n - 1:
            dx, dy = xs[k + 1] - xs[k], ys[k + 1] - ys[k]
            if dx * dx + dy * dy > 1e-12:
                prev = math.atan2(dy, dx)
        phis.append(prev)
    return ReferenceWindow(states=np.column_stack([xs, ys, phis, vs]))


def _rollout(state: VehicleState, us: list, dt: float, wheelbase: float):
    """Predict the state sequence for a flat [a0, d0, a1, d1, ...] input list."""
    zs = [(state.x, state.y, state.phi, state.v)]
    x, y, phi, v = zs[0]
    for t in range(len(us) // 2):
        a, d = us[2 * t], us[2 * t + 1]
        x += v * math.cos(phi) * dt
        y += v * math.sin(phi) * dt
        phi += v * math.tan(d) / wheelbase * dt
        v += a * dt
        zs.append((x, y, phi, v))
    return zs


def _cost_of(zs, us, ref: np.ndarray, cfg: TrackerConfig) -> float:
    """Stage cost over steps 1..T-1, terminal at T, input and rate terms."""
    qx, qy, qp, qv = cfg.q_state
    fx, fy, fp, fv = cfg.q_terminal
    ra, rd = cfg.r_input
    da, dd = cfg.r_rate
    T = len(us) // 2
    total = 0.0
    for t in range(1, T + 1):
        x, y, phi, v = zs[t]
        ex = x - ref[t, 0]
        ey = y - ref[t, 1]
        ep = wrap_angle(phi - ref[t, 2])
        ev = v - ref[t, 3]
        if t == T:
            total += fx * ex * ex + fy * ey * ey + fp * ep * ep + fv * ev * ev
        else:
            total += qx * ex * ex + qy * ey * ey + qp * ep * ep + qv * ev * ev
    for t in range(T):
        total += ra * us[2 * t] ** 2 + rd * us[2 * t + 1] ** 2
    for t in range(T - 1):
        total += da * (us[2 * t + 2] - us[2 * t]) ** 2
        total += dd * (us[2 * t + 3] - us[2 * t + 1]) ** 2
    return total


@lru_cache(maxsize=8)
def _rate_hessian(T: int, r_rate: tuple[float, float]) -> np.ndarray:
    """Constant Hessian contribution of the input-rate term."""
    nu = 2 * T
    diff = np.zeros((nu - 2, nu))
    idx = np.arange(nu - 2)
    diff[idx, idx] = -1.0
    diff[idx, idx + 2] = 1.0
    rate_diag = np.array(r_rate * (T - 1))
    return diff.T @ (diff * rate_diag[:, None])


def _quadratic_model(zs, us, ref: np.ndarray, cfg: TrackerConfig,
                     params: VehicleParams, rate_h: np.ndarray):
    """Hessian and gradient of the cost in the input perturbation.

    Sensitivities of each predicted state to each input are chained through
    the linearized dynamics in place; the quadratic is J(du) ~ 2 g'du + du'H du.
    """
    T = cfg.horizon_steps
    nu = 2 * T
    dt = cfg.dt
    L = params.wheelbase
    big_s = np.zeros((4 * T, nu))
    w = np.zeros(4 * T)
    e = np.zeros(4 * T)
    s = np.zeros((4, nu))
    for t in range(T):
        x, y, phi, v = zs[t]
        d = us[2 * t + 1]
        # rows of s are d(state)/d(inputs); chain the Euler step in place,
        # position rows first since they read the un-updated phi row
        s[0] += (-v * math.sin(phi) * dt) * s[2] + (math.cos(phi) * dt) * s[3]
        s[1] += (v * math.cos(phi) * dt) * s[2] + (math.sin(phi) * dt) * s[3]
        s[2] += (math.tan(d) / L * dt) * s[3]
        cos_d = math.cos(d)
        s[2, 2 * t + 1] += v / (L * cos_d * cos_d) * dt
        s[3, 2 * t] += dt
        big_s[4 * t:4 * t + 4] = s
        row = zs[t + 1]
        e[4 * t + 0] = row[0] - ref[t + 1, 0]
        e[4 * t + 1] = row[1] - ref[t + 1, 1]
        e[4 * t + 2] = wrap_angle(row[2] - ref[t + 1, 2])
        e[4 * t + 3] = row[3] - ref[t + 1, 3]
        w[4 * t:4 * t + 4] = cfg.q_terminal if t == T - 1 else cfg.q_state

    h = big_s.T @ (big_s * w[:, None])
    g = big_s.T @ (w * e)

    u_vec = np.asarray(us)
    r_diag = np.array(cfg.r_input * T)
    h[np.diag_indices(nu)] += r_diag
    g += r_diag * u_vec

    h += rate_h
    g += rate_h @ u_vec
    return h, g


def _descent(h: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Projected coordinate descent for min 2 g'du + du'H du over a box.

    Seeded with the clipped unconstrained minimizer, so the sweeps are a
    cheap no-op whenever no limit is active and only refine the coordinates
    that the projection disturbed.
    """
    nu = len(g)
    try:
        du = np.linalg.solve(h, -g)
        np.clip(du, lo, hi, out=du)
    except np.linalg.LinAlgError:
        du = np.zeros(nu)
    r = g + h @ du
    cols: dict[int, np.ndarray] = {}
    diag = np.diag(h)
    for _ in range(_MAX_SWEEPS):
        moved = 0.0
        for i in range(nu):
            hii = diag[i]
            if hii <= 1e-12:
                continue
            new = du[i] - r[i] / hii
            if new < lo[i]:
                new = lo[i]
            elif new > hi[i]:
                new = hi[i]
            step = new - du[i]
            if step != 0.0:
                du[i] = new
                col = cols.get(i)
                if col is None:
                    col = cols[i] = np.ascontiguousarray(h[:, i])
                r += col * step
                if abs(step) > moved:
                    moved = abs(step)
        if moved < _SWEEP_TOL:
            break
    return du


def solve(state: VehicleState, ref: ReferenceWindow, config: TrackerConfig,
          params: VehicleParams, warm_start=None) -> MpcSolution:
    """Minimize the tracking cost; returns limit-respecting commands.

    Starts from the warm sequence when it beats all-zero inputs, then runs
    up to max_iterations linearize/descend rounds, accepting a step only if
    the true cost drops, so accepted iterates are monotone and the result
    never exceeds the zero-input cost.
    """
    T = config.horizon_steps
    refs = ref.states
    if refs.shape[0] != T + 1:
        raise ValueError("reference window length does not match horizon")
    for val in (state.x, state.y, state.phi, state.v):
        if not math.isfinite(val):
            raise ValueError("non-finite vehicle state")

    nu = 2 * T
    lo_u = np.array((params.a_min, params.delta_min) * T)
    hi_u = np.array((params.a_max, params.delta_max) * T)

    us = [0.0] * nu
    zs = _rollout(state, us, config.dt, params.wheelbase)
    cost = _cost_of(zs, us, refs, config)
    if warm_start is not None and len(warm_start) == T:
        warm = []
        for cmd in warm_start:
            warm.extend((cmd.a, cmd.delta))
        warm = [min(max(v, l), h) for v, l, h in zip(warm, lo_u, hi_u)]
        warm_zs = _rollout(state, warm, config.dt, params.wheelbase)
        warm_cost = _cost_of(warm_zs, warm, refs, config)
        if warm_cost < cost:
            us, zs, cost = warm, warm_zs, warm_cost

    rate_h = _rate_hessian(T, config.r_rate)
    u_vec = np.asarray(us)
    for _ in range(config.max_iterations):
        h, g = _quadratic_model(zs, us, refs, config, params, rate_h)
        du = _descent(h, g, lo_u - u_vec, hi_u - u_vec)
        if float(np.max(np.abs(du))) < 1e-9:
            break
        accepted = False
        prev_cost = cost
        for scale in _BACKTRACK_SCALES:
            cand = np.clip(u_vec + scale * du, lo_u, hi_u)
            cand_list = cand.tolist()
            cand_zs = _rollout(state, cand_list, config.dt, params.wheelbase)
            cand_cost = _cost_of(cand_zs, cand_list, refs, config)
            if cand_cost < cost - 1e-12:
                us, zs, cost = cand_list, cand_zs, cand_cost
                u_vec = cand
                accepted = True
                break
        if not accepted:
            break
        if prev_cost - cost < 1e-9 * max(1.0, prev_cost):
            break

    commands = tuple(Command(a=us[2 * t], delta=us[2 * t + 1]) for t in range(T))
    predicted = tuple(VehicleState(x=z[0], y=z[1], phi=wrap_angle(z[2]), v=z[3])
                      for z in zs)
    return MpcSolution(commands=commands, predicted=predicted, cost=cost)


def first_command(sol: MpcSolution) -> Command:
    assert sol.commands, "solution carries no commands"
    return sol.commands[0]


class PathTracker:
    """Per-car receding-horizon wrapper: windows the reference, warm starts
    from the previous solution shifted by one step, applies the first
    command."""

    def __init__(self, config: TrackerConfig, params: VehicleParams):
        self.config = config
        self.params = params
        self._last: tuple[Command, ...] | None = None
        self.last_cost = 0.0

    def reset(self) -> None:
        self._last = None
        self.last_cost = 0.0

    def command(self, state: VehicleState, trajectory) -> Command:
        ref = extract_reference(trajectory, state, self.config)
        warm = None
        if self._last is not None:
            warm = self._last[1:] + (self._last[-1],)
        sol = solve(state, ref, self.config, self.params, warm_start=warm)
        self._last = sol.commands
        self.last_cost = sol.cost
        return first_command(sol)
