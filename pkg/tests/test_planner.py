"""Planner tests.

Spline fitting is checked against an independent full 6x6 boundary-condition
solve (hand-rolled Gauss-Jordan, no numpy.linalg), derivatives against
finite differences, guide geometry against hand-computed straight-track
positions, and the overtake timing model against direct formula evaluation.
"""

import math

import numpy as np
import pytest

from argosim.planner import (
    BoundaryState,
    InfeasiblePlanError,
    OvertakeGeometry,
    _joint_states,
    default_pass_offset,
    defense_guides,
    eval_quintic,
    feasible_overtake,
    fit_quintic,
    overtake_guides,
    overtake_times,
    plan_trajectory,
)
from argosim.track import TrackConfig, build_oval_track, closest_on
from argosim.vehicle import VehicleParams, VehicleState

REFERENCE = TrackConfig(
    straight_length=600.0,
    turn_radius=200.0,
    track_width=15.0,
    waypoint_spacing=1.0,
    straight_speed=62.0,
    corner_speed=45.0,
    lane_offset=1.5,
)

PARAMS = VehicleParams()


def quintic_oracle(xs, vs, as_, xe, ve, ae, T):
    """Coefficients via the full 6x6 boundary system, eliminated by hand.

    Independent of the implementation's closed-form a0..a2 plus 3x3 solve.
    """
    rows = [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, xs],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, vs],
        [0.0, 0.0, 2.0, 0.0, 0.0, 0.0, as_],
        [1.0, T, T ** 2, T ** 3, T ** 4, T ** 5, xe],
        [0.0, 1.0, 2 * T, 3 * T ** 2, 4 * T ** 3, 5 * T ** 4, ve],
        [0.0, 0.0, 2.0, 6 * T, 12 * T ** 2, 20 * T ** 3, ae],
    ]
    n = 6
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(rows[r][col]))
        rows[col], rows[piv] = rows[piv], rows[col]
        assert abs(rows[col][col]) > 1e-12
        for r in range(n):
            if r == col:
                continue
            f = rows[r][col] / rows[col][col]
            for c in range(col, n + 1):
                rows[r][c] -= f * rows[col][c]
    return [rows[i][n] / rows[i][i] for i in range(n)]


def random_states(rng):
    start = BoundaryState(
        pos=(rng.uniform(-20, 20), rng.uniform(-20, 20)),
        vel=(rng.uniform(-15, 15), rng.uniform(-15, 15)),
        acc=(rng.uniform(-5, 5), rng.uniform(-5, 5)),
    )
    end = BoundaryState(
        pos=(rng.uniform(-20, 20), rng.uniform(-20, 20)),
        vel=(rng.uniform(-15, 15), rng.uniform(-15, 15)),
        acc=(rng.uniform(-5, 5), rng.uniform(-5, 5)),
    )
    return start, end


class TestFitQuintic:
    def test_stationary(self):
        st = BoundaryState(pos=(2.0, -1.0))
        seg = fit_quintic(st, st, 1.0)
        assert abs(seg.coeffs_x[0] - 2.0) < 1e-12
        assert abs(seg.coeffs_y[0] + 1.0) < 1e-12
        for c in seg.coeffs_x[1:] + seg.coeffs_y[1:]:
            assert abs(c) < 1e-12

    def test_linear_motion(self):
        start = BoundaryState(pos=(0.0, 0.0), vel=(1.0, 0.0))
        end = BoundaryState(pos=(1.0, 0.0), vel=(1.0, 0.0))
        seg = fit_quintic(start, end, 1.0)
        expect = (0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        for got, want in zip(seg.coeffs_x, expect):
            assert abs(got - want) < 1e-9
        for c in seg.coeffs_y:
            assert abs(c) < 1e-9

    def test_matches_full_system_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            start, end = random_states(rng)
            T = rng.uniform(0.5, 6.0)
            seg = fit_quintic(start, end, T)
            for axis, coeffs in ((0, seg.coeffs_x), (1, seg.coeffs_y)):
                want = quintic_oracle(
                    start.pos[axis], start.vel[axis], start.acc[axis],
                    end.pos[axis], end.vel[axis], end.acc[axis], T)
                assert np.allclose(coeffs, want, rtol=1e-6, atol=1e-6)

    def test_boundary_reproduction(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            start, end = random_states(rng)
            T = rng.uniform(0.5, 5.0)
            seg = fit_quintic(start, end, T)
            for t, want in ((0.0, start), (T, end)):
                got = eval_quintic(seg, t)
                for axis in range(2):
                    assert abs(got.pos[axis] - want.pos[axis]) < 1e-9
                    assert abs(got.vel[axis] - want.vel[axis]) < 1e-9
                    assert abs(got.acc[axis] - want.acc[axis]) < 1e-9

    def test_bad_duration(self):
        st = BoundaryState(pos=(0.0, 0.0))
        with pytest.raises(ValueError):
            fit_quintic(st, st, 0.0)
        with pytest.raises(ValueError):
            fit_quintic(st, st, -1.0)


class TestEvalQuintic:
    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            start, end = random_states(rng)
            T = rng.uniform(1.0, 4.0)
            seg = fit_quintic(start, end, T)
            for t in rng.uniform(0.01 * T, 0.99 * T, size=5):
                h = 1e-5
                lo, hi, mid = eval_quintic(seg, t - h), eval_quintic(seg, t + h), eval_quintic(seg, t)
                for axis in range(2):
                    fd_v = (hi.pos[axis] - lo.pos[axis]) / (2 * h)
                    assert abs(fd_v - mid.vel[axis]) < 1e-6
            # second derivative with a coarser step: roundoff scales as 1/h^2
            for t in rng.uniform(0.01 * T, 0.99 * T, size=3):
                h = 1e-4
                lo, hi, mid = eval_quintic(seg, t - h), eval_quintic(seg, t + h), eval_quintic(seg, t)
                for axis in range(2):
                    fd_a = (hi.pos[axis] - 2 * mid.pos[axis] + lo.pos[axis]) / (h * h)
                    assert abs(fd_a - mid.acc[axis]) < 1e-4

    def test_out_of_range(self):
        seg = fit_quintic(BoundaryState(pos=(0.0, 0.0)), BoundaryState(pos=(1.0, 1.0)), 2.0)
        with pytest.raises(ValueError):
            eval_quintic(seg, -0.1)
        with pytest.raises(ValueError):
            eval_quintic(seg, 2.1)


class TestOvertakeGuides:
    def setup_method(self):
        self.raceline, self.bounds, _ = build_oval_track(REFERENCE)

    def test_straight_centerline_pass(self):
        # opponent mid bottom straight on the raceline; farther boundary is
        # the outside (y = -7.5), so the pass offsets to y = 1.5 - 7.5
        opp = VehicleState(x=300.0, y=1.5, phi=0.0, v=30.0)
        ego = VehicleState(x=280.0, y=1.5, phi=0.0, v=30.0)
        g = overtake_guides(ego, opp, self.raceline, self.bounds, PARAMS)
        d = default_pass_offset(7.5)
        assert d == 7.5
        assert abs(g.g0[0] - 280.0) < REFERENCE.waypoint_spacing
        assert abs(g.g0[1] - 1.5) < 1e-6
        assert abs(g.g1[0] - 300.0) < 1e-6
        assert abs(g.g1[1] - (1.5 - d)) < 1e-6
        assert abs(g.g2[0] - (300.0 + PARAMS.car_length)) < 1e-6
        assert abs(g.g2[1] - (1.5 - d)) < 1e-6
        assert abs(g.g3[0] - (300.0 + 2 * PARAMS.car_length)) < 0.6
        assert abs(g.g3[1] - 1.5) < 1e-6
        on_line, _ = closest_on(self.raceline, g.g3)
        assert math.dist(on_line, g.g3) < 1e-6

    def test_left_edge_selects_right(self):
        opp = VehicleState(x=300.0, y=6.0, phi=0.0, v=30.0)
        ego = VehicleState(x=280.0, y=1.5, phi=0.0, v=30.0)
        g = overtake_guides(ego, opp, self.raceline, self.bounds, PARAMS)
        assert g.g1[1] < opp.y
        assert g.g2[1] < opp.y

    def test_right_edge_selects_left(self):
        opp = VehicleState(x=300.0, y=-6.0, phi=0.0, v=30.0)
        ego = VehicleState(x=280.0, y=1.5, phi=0.0, v=30.0)
        g = overtake_guides(ego, opp, self.raceline, self.bounds, PARAMS)
        assert g.g1[1] > opp.y
        assert g.g2[1] > opp.y

    def test_oversized_offset_rejected(self):
        opp = VehicleState(x=300.0, y=1.5, phi=0.0, v=30.0)
        ego = VehicleState(x=280.0, y=1.5, phi=0.0, v=30.0)
        with pytest.raises(InfeasiblePlanError):
            overtake_guides(ego, opp, self.raceline, self.bounds,
                            PARAMS, lateral_offset=30.0)


class TestDefenseGuides:
    def setup_method(self):
        self.raceline, self.bounds, _ = build_oval_track(REFERENCE)

    def test_projection_station(self):
        # attacker at 80 m/s, half-second horizon: intercept 40 m ahead
        opp = VehicleState(x=260.0, y=1.5, phi=0.0, v=80.0)
        ego = VehicleState(x=300.0, y=1.5, phi=0.0, v=55.0)
        g = defense_guides(ego, opp, self.raceline, self.bounds,
                           T_p=0.5, k_mult=1.0, params=PARAMS)
        assert abs(g.i1[0] - 300.0) < 1e-6
        assert abs(g.i1[1] - (1.5 - 7.5)) < 1e-6
        proj = (300.0, 1.5)
        assert abs(math.dist(g.occupied, proj) - PARAMS.car_length) < 1e-9
        assert abs(g.i2[0] - (300.0 + PARAMS.car_length)) < 0.6
        on_line, _ = closest_on(self.raceline, g.i2)
        assert math.dist(on_line, g.i2) < 1e-6

    def test_zero_horizon_rejected(self):
        opp = VehicleState(x=260.0, y=1.5, phi=0.0, v=80.0)
        ego = VehicleState(x=300.0, y=1.5, phi=0.0, v=55.0)
        for bad in (0.0, -1.0):
            with pytest.raises(ValueError):
                defense_guides(ego, opp, self.raceline, self.bounds,
                               T_p=bad, k_mult=1.0, params=PARAMS)

    def test_oversized_offset_rejected(self):
        opp = VehicleState(x=260.0, y=1.5, phi=0.0, v=80.0)
        ego = VehicleState(x=300.0, y=1.5, phi=0.0, v=55.0)
        with pytest.raises(InfeasiblePlanError):
            defense_guides(ego, opp, self.raceline, self.bounds,
                           T_p=0.5, k_mult=1.0, params=PARAMS, lateral_offset=30.0)


class TestPlanTrajectory:
    def setup_method(self):
        self.raceline, self.bounds, _ = build_oval_track(REFERENCE)

    def overtake_scene(self):
        opp = VehicleState(x=300.0, y=1.5, phi=0.0, v=30.0)
        ego = VehicleState(x=280.0, y=1.5, phi=0.0, v=30.0)
        g = overtake_guides(ego, opp, self.raceline, self.bounds, PARAMS)
        return opp, g

    def test_straight_segment(self):
        out = plan_trajectory([(100.0, 1.5), (140.0, 1.5)], [30.0, 30.0], 2.0,
                              source="overtake")
        assert len(out) == 21
        assert np.all(np.abs(out.ys - 1.5) < 1e-9)
        assert np.all(np.diff(out.xs) > 0)
        steps = np.hypot(np.diff(out.xs), np.diff(out.ys))
        assert np.all(steps <= 2 * 2.0 + 1e-9)
        assert np.all(np.abs(out.vs - 30.0) < 1e-9)
        assert out.waypoints[0] == (100.0, 1.5, 30.0)

    def test_overtake_spline_extremum(self):
        _, g = self.overtake_scene()
        out = plan_trajectory(g.points, [30.0, 33.0, 33.0, 30.0], 0.5,
                              source="overtake", raceline=self.raceline,
                              bounds=self.bounds)
        max_lat = float(np.max(np.abs(out.ys - 1.5)))
        d = default_pass_offset(7.5)
        assert 0.95 * d <= max_lat <= 1.05 * d

    def test_clearance_from_opponent(self):
        opp, g = self.overtake_scene()
        out = plan_trajectory(g.points, [30.0, 33.0, 33.0, 30.0], 0.5,
                              source="overtake", raceline=self.raceline,
                              bounds=self.bounds)
        dists = np.hypot(out.xs - opp.x, out.ys - opp.y)
        assert float(np.min(dists)) >= default_pass_offset(7.5) - 0.1

    def test_c2_continuity_at_joints(self):
        _, g = self.overtake_scene()
        speeds = [30.0, 33.0, 33.0, 30.0]
        joints = _joint_states(g.points, speeds)
        for i in range(len(joints) - 2):
            chord_a = math.dist(g.points[i], g.points[i + 1])
            chord_b = math.dist(g.points[i + 1], g.points[i + 2])
            ta = chord_a / max((speeds[i] + speeds[i + 1]) / 2, 1.0)
            tb = chord_b / max((speeds[i + 1] + speeds[i + 2]) / 2, 1.0)
            seg_a = fit_quintic(joints[i], joints[i + 1], ta)
            seg_b = fit_quintic(joints[i + 1], joints[i + 2], tb)
            end_a = eval_quintic(seg_a, ta)
            start_b = eval_quintic(seg_b, 0.0)
            for axis in range(2):
                assert abs(end_a.vel[axis] - start_b.vel[axis]) < 1e-6
                assert abs(end_a.acc[axis] - start_b.acc[axis]) < 1e-6

    def test_containment_rejects_off_track(self):
        with pytest.raises(InfeasiblePlanError):
            plan_trajectory([(100.0, 31.5), (140.0, 31.5)], [30.0, 30.0], 2.0,
                            source="overtake", raceline=self.raceline,
                            bounds=self.bounds)

    def test_monotonic_progress_rejects_doubling_back(self):
        with pytest.raises(InfeasiblePlanError):
            plan_trajectory([(140.0, 1.5), (100.0, 1.5)], [30.0, 30.0], 2.0,
                            source="overtake", raceline=self.raceline,
                            bounds=self.bounds)

    def test_monotonic_progress_over_accepted_plan(self):
        _, g = self.overtake_scene()
        out = plan_trajectory(g.points, [30.0, 33.0, 33.0, 30.0], 0.5,
                              source="overtake", raceline=self.raceline,
                              bounds=self.bounds)
        arcs = [closest_on(self.raceline, (x, y))[1] for x, y in zip(out.xs, out.ys)]
        assert all(b > a for a, b in zip(arcs, arcs[1:]))

    def test_speed_interpolation_endpoints(self):
        out = plan_trajectory([(100.0, 1.5), (140.0, 1.5), (180.0, 1.5)],
                              [30.0, 40.0, 35.0], 2.0, source="defense")
        assert abs(out.vs[0] - 30.0) < 1e-9
        assert abs(out.vs[-1] - 35.0) < 1e-9
        assert float(np.max(out.vs)) <= 40.0 + 1e-9

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            plan_trajectory([(0.0, 0.0)], [30.0], 2.0, source="overtake")
        with pytest.raises(ValueError):
            plan_trajectory([(0.0, 0.0), (10.0, 0.0)], [30.0], 2.0, source="overtake")
        with pytest.raises(ValueError):
            plan_trajectory([(0.0, 0.0), (10.0, 0.0)], [30.0, 30.0], 2.0, source="sideways")


class TestOvertakeTimes:
    def geom(self, **kw):
        base = dict(y_gap=3.5, theta1=0.3, theta2=0.3, L=4.9, D_sepF=20.0,
                    u_ego=55.0, u_opp=50.0, u_boost=0.0, boost_fraction=1.0)
        base.update(kw)
        return OvertakeGeometry(**base)

    def test_zero_gap(self):
        t_a, _, _ = overtake_times(self.geom(y_gap=0.0))
        assert t_a == 0.0

    def test_clear_time_arithmetic(self):
        _, t_b, _ = overtake_times(self.geom(L=5.0))
        assert abs(t_b - 1.0) < 1e-12

    def test_diverge_time_value(self):
        geom = self.geom(y_gap=3.0, theta1=math.radians(30.0))
        t_a, _, _ = overtake_times(geom)
        assert abs(t_a - 0.6928) < 1e-3
        assert abs(t_a - 3.0 / (5.0 * math.cos(math.radians(30.0)))) < 1e-12

    def test_inverse_scaling_with_closing_speed(self):
        slow = overtake_times(self.geom(u_ego=54.0))     # closing 4
        fast = overtake_times(self.geom(u_ego=58.0))     # closing 8
        for a, b in zip(slow, fast):
            if a == 0.0:
                assert b == 0.0
            else:
                assert abs(b - a / 2) < 1e-12 * max(1.0, a)

    def test_cannot_close(self):
        with pytest.raises(InfeasiblePlanError):
            overtake_times(self.geom(u_ego=45.0))

    def test_bad_separation(self):
        with pytest.raises(ValueError):
            overtake_times(self.geom(D_sepF=4.0))

    def test_total_is_sum_of_parts(self):
        times = overtake_times(self.geom())
        assert all(t >= 0 for t in times)
        geom = self.geom()
        du = geom.closing_speed()
        want = (geom.y_gap / (du * math.cos(geom.theta1))
                + geom.L / du
                + (geom.D_sepF - geom.L) / (du * math.cos(geom.theta2)))
        assert abs(sum(times) - want) < 1e-12


class TestFeasibleOvertake:
    def test_within_budget(self):
        assert feasible_overtake(5.0, 20.0, 6.0)

    def test_budget_below_entry_floor(self):
        assert not feasible_overtake(1.0, 5.9, 6.0)
        assert not feasible_overtake(1.0, 6.0, 6.0)

    def test_maneuver_longer_than_budget(self):
        assert not feasible_overtake(25.0, 20.0, 6.0)
        assert feasible_overtake(20.0, 20.0, 6.0)


class TestDefaultPassOffset:
    def test_minimum_separation_dominates_narrow_track(self):
        assert default_pass_offset(7.5) == 7.5
        assert default_pass_offset(12.0) == 7.5

    def test_wide_track_scales(self):
        assert abs(default_pass_offset(15.0) - 9.0) < 1e-12
