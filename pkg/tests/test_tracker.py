"""Tracker tests.

The solver is checked against an exhaustive coarse-grid enumeration over
all 3-step command sequences, a zero-input cost bound, and a fixed-point
check on the reference. The lap-level tracking-quality bound runs a short
closed-loop simulation.
"""

import math

import numpy as np
import pytest

from argosim.planner import PlannerOutput
from argosim.track import RacelineCursor, TrackConfig, build_oval_track
from argosim.tracker import (
    MpcSolution,
    PathTracker,
    ReferenceWindow,
    TrackerConfig,
    extract_reference,
    first_command,
    solve,
)
from argosim.vehicle import Command, VehicleParams, VehicleState, step

REFERENCE = TrackConfig(
    straight_length=600.0,
    turn_radius=200.0,
    track_width=15.0,
    waypoint_spacing=1.0,
    straight_speed=30.0,
    corner_speed=30.0,
    lane_offset=1.5,
)

PARAMS = VehicleParams()


def rollout_oracle(state, cmds, dt, wheelbase):
    """Independent Euler rollout used by the enumeration tests."""
    zs = [(state.x, state.y, state.phi, state.v)]
    x, y, phi, v = zs[0]
    for a, d in cmds:
        x = x + v * math.cos(phi) * dt
        y = y + v * math.sin(phi) * dt
        phi = phi + v * math.tan(d) / wheelbase * dt
        v = v + a * dt
        zs.append((x, y, phi, v))
    return zs


def cost_oracle(zs, cmds, refs, cfg):
    """Cost written out from scratch: stage terms for the interior steps,
    terminal weights at the end, input magnitude and rate penalties."""
    total = 0.0
    T = len(cmds)
    for t in range(1, T + 1):
        w = cfg.q_terminal if t == T else cfg.q_state
        ex = zs[t][0] - refs[t][0]
        ey = zs[t][1] - refs[t][1]
        ep = zs[t][2] - refs[t][2]
        ep = (ep + math.pi) % (2 * math.pi) - math.pi
        if ep == -math.pi:
            ep = math.pi
        ev = zs[t][3] - refs[t][3]
        total += w[0] * ex ** 2 + w[1] * ey ** 2 + w[2] * ep ** 2 + w[3] * ev ** 2
    for t, (a, d) in enumerate(cmds):
        total += cfg.r_input[0] * a ** 2 + cfg.r_input[1] * d ** 2
        if t > 0:
            total += cfg.r_rate[0] * (a - cmds[t - 1][0]) ** 2
            total += cfg.r_rate[1] * (d - cmds[t - 1][1]) ** 2
    return total


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrackerConfig(horizon_steps=1)
        with pytest.raises(ValueError):
            TrackerConfig(dt=0.0)
        with pytest.raises(ValueError):
            TrackerConfig(q_state=(1.0, 1.0, -1.0, 1.0))
        with pytest.raises(ValueError):
            TrackerConfig(max_iterations=0)

    def test_reference_window_shape(self):
        with pytest.raises(ValueError):
            ReferenceWindow(states=np.zeros((3, 3)))
        with pytest.raises(ValueError):
            ReferenceWindow(states=np.array([[0.0, 0.0, 0.0, math.nan]] * 3))


class TestExtractReference:
    def setup_method(self):
        self.line, self.bounds, _ = build_oval_track(REFERENCE)
        self.cfg = TrackerConfig()

    def test_on_trajectory_starts_at_projection(self):
        state = VehicleState(x=100.0, y=1.5, phi=0.0, v=30.0)
        ref = extract_reference(self.line, state, self.cfg)
        assert ref.states.shape == (self.cfg.horizon_steps + 1, 4)
        assert abs(ref.states[0, 0] - 100.0) < 1e-6
        assert abs(ref.states[0, 1] - 1.5) < 1e-6
        assert abs(ref.states[0, 3] - 30.0) < 1e-9

    def test_spacing_follows_speed(self):
        state = VehicleState(x=100.0, y=1.5, phi=0.0, v=30.0)
        ref = extract_reference(self.line, state, self.cfg)
        gaps = np.hypot(np.diff(ref.states[:, 0]), np.diff(ref.states[:, 1]))
        assert np.all(np.abs(gaps - 30.0 * self.cfg.dt) < 0.01)
        assert np.all(np.abs(ref.states[:, 2]) < 1e-6)

    def test_stationary_reference_repeats(self):
        plan = PlannerOutput(xs=np.linspace(0.0, 20.0, 11),
                             ys=np.full(11, 1.5),
                             vs=np.zeros(11), source="overtake")
        state = VehicleState(x=4.0, y=1.5, phi=0.3, v=0.0)
        ref = extract_reference(plan, state, self.cfg)
        assert np.all(ref.states == ref.states[0])
        assert abs(ref.states[0, 2] - 0.3) < 1e-12

    def test_plan_window_clamps_at_end(self):
        plan = PlannerOutput(xs=np.linspace(0.0, 10.0, 6),
                             ys=np.zeros(6),
                             vs=np.full(6, 40.0), source="overtake")
        state = VehicleState(x=0.0, y=0.0, phi=0.0, v=40.0)
        ref = extract_reference(plan, state, self.cfg)
        assert abs(ref.states[-1, 0] - 10.0) < 1e-9
        assert abs(ref.states[-2, 0] - 10.0) < 1e-9

    def test_rejects_bad_trajectories(self):
        state = VehicleState(x=0.0, y=0.0, phi=0.0, v=10.0)
        short = PlannerOutput(xs=np.array([1.0]), ys=np.array([1.0]),
                              vs=np.array([5.0]), source="overtake")
        with pytest.raises(ValueError):
            extract_reference(short, state, self.cfg)
        with pytest.raises(ValueError):
            extract_reference([(0.0, 0.0), (1.0, 0.0)], state, self.cfg)


class TestSolve:
    def setup_method(self):
        self.line, _, _ = build_oval_track(REFERENCE)
        self.cfg = TrackerConfig()

    def straight_ref(self, cfg, v=30.0):
        rows = [(v * cfg.dt * k, 0.0, 0.0, v) for k in range(cfg.horizon_steps + 1)]
        return ReferenceWindow(states=np.array(rows))

    def test_on_reference_fixed_point(self):
        state = VehicleState(x=100.0, y=1.5, phi=0.0, v=30.0)
        ref = extract_reference(self.line, state, self.cfg)
        sol = solve(state, ref, self.cfg, PARAMS)
        cmd = first_command(sol)
        assert abs(cmd.a) < 0.05
        assert abs(cmd.delta) < 0.005

    def test_zero_weights_zero_commands(self):
        cfg = TrackerConfig(q_state=(0.0,) * 4, q_terminal=(0.0,) * 4)
        state = VehicleState(x=5.0, y=3.0, phi=0.4, v=20.0)
        sol = solve(state, self.straight_ref(cfg), cfg, PARAMS)
        for cmd in sol.commands:
            assert cmd.a == 0.0 and cmd.delta == 0.0
        assert sol.cost == 0.0

    def test_cost_bounded_by_zero_input(self):
        state = VehicleState(x=0.0, y=2.0, phi=0.1, v=27.0)
        ref = self.straight_ref(self.cfg)
        sol = solve(state, ref, self.cfg, PARAMS)
        zero_zs = rollout_oracle(state, [(0.0, 0.0)] * self.cfg.horizon_steps,
                                 self.cfg.dt, PARAMS.wheelbase)
        zero_cost = cost_oracle(zero_zs, [(0.0, 0.0)] * self.cfg.horizon_steps,
                                ref.states, self.cfg)
        assert sol.cost <= zero_cost + 1e-9

    def test_reported_cost_matches_independent_recompute(self):
        state = VehicleState(x=0.0, y=2.0, phi=0.1, v=27.0)
        ref = self.straight_ref(self.cfg)
        sol = solve(state, ref, self.cfg, PARAMS)
        cmds = [(c.a, c.delta) for c in sol.commands]
        zs = rollout_oracle(state, cmds, self.cfg.dt, PARAMS.wheelbase)
        assert abs(cost_oracle(zs, cmds, ref.states, self.cfg) - sol.cost) < 1e-9

    def test_beats_exhaustive_coarse_grid(self):
        cfg = TrackerConfig(horizon_steps=3, dt=0.2, max_iterations=6)
        state = VehicleState(x=0.0, y=1.0, phi=0.05, v=28.0)
        ref = self.straight_ref(cfg)
        sol = solve(state, ref, cfg, PARAMS)
        cmds = [(c.a, c.delta) for c in sol.commands]
        zs = rollout_oracle(state, cmds, cfg.dt, PARAMS.wheelbase)
        solver_cost = cost_oracle(zs, cmds, ref.states, cfg)

        accels = np.linspace(PARAMS.a_min, PARAMS.a_max, 5)
        steers = np.linspace(PARAMS.delta_min, PARAMS.delta_max, 5)
        levels = [(a, d) for a in accels for d in steers]
        best = math.inf
        for c0 in levels:
            for c1 in levels:
                for c2 in levels:
                    seq = [c0, c1, c2]
                    grid_zs = rollout_oracle(state, seq, cfg.dt, PARAMS.wheelbase)
                    c = cost_oracle(grid_zs, seq, ref.states, cfg)
                    if c < best:
                        best = c
        assert solver_cost <= 1.05 * best

    def test_warm_start_never_hurts(self):
        state = VehicleState(x=0.0, y=2.5, phi=-0.1, v=25.0)
        ref = self.straight_ref(self.cfg)
        cold = solve(state, ref, self.cfg, PARAMS)
        rewarmed = solve(state, ref, self.cfg, PARAMS, warm_start=cold.commands)
        assert rewarmed.cost <= cold.cost + 1e-9

    def test_commands_respect_limits(self):
        state = VehicleState(x=0.0, y=12.0, phi=1.0, v=5.0)
        sol = solve(state, self.straight_ref(self.cfg, v=60.0), self.cfg, PARAMS)
        for cmd in sol.commands:
            assert PARAMS.a_min <= cmd.a <= PARAMS.a_max
            assert PARAMS.delta_min <= cmd.delta <= PARAMS.delta_max

    def test_determinism(self):
        state = VehicleState(x=0.0, y=2.0, phi=0.1, v=27.0)
        ref = self.straight_ref(self.cfg)
        a = solve(state, ref, self.cfg, PARAMS)
        b = solve(state, ref, self.cfg, PARAMS)
        assert a.commands == b.commands
        assert a.cost == b.cost

    def test_rejects_bad_inputs(self):
        state = VehicleState(x=0.0, y=0.0, phi=0.0, v=math.nan)
        with pytest.raises(ValueError):
            solve(state, self.straight_ref(self.cfg), self.cfg, PARAMS)
        good = VehicleState(x=0.0, y=0.0, phi=0.0, v=10.0)
        short = ReferenceWindow(states=np.zeros((3, 4)))
        with pytest.raises(ValueError):
            solve(good, short, self.cfg, PARAMS)


class TestFirstCommand:
    def test_returns_head_of_sequence(self):
        cmds = (Command(a=1.0, delta=0.1), Command(a=0.0, delta=0.0))
        sol = MpcSolution(commands=cmds, predicted=(), cost=1.0)
        assert first_command(sol) == cmds[0]

    def test_empty_solution_asserts(self):
        sol = MpcSolution(commands=(), predicted=(), cost=0.0)
        with pytest.raises(AssertionError):
            first_command(sol)


class TestClosedLoopTracking:
    def test_lap_rms_lateral_error(self):
        line, _, _ = build_oval_track(REFERENCE)
        tracker = PathTracker(TrackerConfig(), PARAMS)
        state = VehicleState(x=0.0, y=float(line.ys[0]), phi=0.0, v=30.0)
        cursor = RacelineCursor(line)
        cursor.seed(state.x, state.y)
        sim_dt = 0.02
        hold = round(tracker.config.dt / sim_dt)
        lat_sq = []
        dist = 0.0
        ticks = 0
        cmd = None
        while dist < line.total_length:
            if ticks % hold == 0:
                cmd = tracker.command(state, line)
            state = step(state, cmd, sim_dt, PARAMS)
            _, _, _, lat = cursor.project(state.x, state.y)
            lat_sq.append(lat * lat)
            dist += state.v * sim_dt
            ticks += 1
        rms = math.sqrt(sum(lat_sq) / len(lat_sq))
        assert rms <= 0.5, f"RMS lateral error {rms:.3f} m"
