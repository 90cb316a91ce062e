"""Quintic-spline local planning: overtake and defense guide geometry,
piecewise-quintic trajectory sampling, and the trapezoidal overtake timing
model.

Guide points compose the four point helpers from the track module: project
the opponent forward, pick the boundary with more room, and offset toward it.
Splines are fit per planar axis with shared boundary states at joints, which
gives velocity and acceleration continuity by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .track import (
    Raceline,
    RacelineCursor,
    TrackBounds,
    closest_on,
    farther_of,
    offset_toward,
    project_along,
    wrap_arc,
)
from .vehicle import VehicleParams, VehicleState


class InfeasiblePlanError(Exception):
    """Raised when requested guide geometry leaves the track."""


@dataclass(frozen=True)
class BoundaryState:
    pos: tuple[float, float]
    vel: tuple[float, float] = (0.0, 0.0)   # [m/s]
    acc: tuple[float, float] = (0.0, 0.0)   # [m/s^2]


@dataclass(frozen=True)
class QuinticSegment:
    """Quintic polynomial per planar axis over t in [0, T]."""
    coeffs_x: tuple[float, ...]     # a0..a5
    coeffs_y: tuple[float, ...]
    T: float

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("segment duration must be positive")


@dataclass(frozen=True)
class OvertakeGuides:
    g0: tuple[float, float]
    g1: tuple[float, float]
    g2: tuple[float, float]
    g3: tuple[float, float]

    @property
    def points(self):
        return [self.g0, self.g1, self.g2, self.g3]


@dataclass(frozen=True)
class DefenseGuides:
    i0: tuple[float, float]
    i1: tuple[float, float]
    i2: tuple[float, float]
    occupied: tuple[float, float]   # superprojection the blocker occupies

    @property
    def points(self):
        return [self.i0, self.i1, self.i2]


@dataclass(frozen=True)
class OvertakeGeometry:
    y_gap: float            # [m] lateral gap to clear
    theta1: float           # [rad] diverge angle
    theta2: float           # [rad] merge angle
    L: float                # [m] opponent car length
    D_sepF: float           # [m] front separation at merge
    u_ego: float            # [m/s]
    u_opp: float            # [m/s]
    u_boost: float          # [m/s]
    boost_fraction: float = 1.0

    def closing_speed(self) -> float:
        return self.u_ego - self.u_opp + self.boost_fraction * self.u_boost


@dataclass
class PlannerOutput:
    """Sampled override trajectory: positions plus a speed profile."""
    xs: np.ndarray
    ys: np.ndarray
    vs: np.ndarray
    source: str             # "overtake" | "defense"

    def __post_init__(self):
        if self.source not in ("overtake", "defense"):
            raise ValueError("source must be 'overtake' or 'defense'")

    def __len__(self):
        return len(self.xs)

    @property
    def waypoints(self) -> list[tuple[float, float, float]]:
        return [(float(x), float(y), float(v))
                for x, y, v in zip(self.xs, self.ys, self.vs)]


def fit_quintic(start: BoundaryState, end: BoundaryState, T: float) -> QuinticSegment:
    """Fit one quintic per axis to the boundary states over duration T.

    The first three coefficients come directly from the start state; the
    remaining three solve a 3x3 linear system in the end conditions.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    coeffs = []
    for axis in range(2):
        xs, vs, as_ = start.pos[axis], start.vel[axis], start.acc[axis]
        xe, ve, ae = end.pos[axis], end.vel[axis], end.acc[axis]
        a0, a1, a2 = xs, vs, as_ / 2.0
        A = np.array([
            [T ** 3, T ** 4, T ** 5],
            [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
            [6 * T, 12 * T ** 2, 20 * T ** 3],
        ])
        b = np.array([
            xe - (a0 + a1 * T + a2 * T ** 2),
            ve - (a1 + 2 * a2 * T),
            ae - 2 * a2,
        ])
        a3, a4, a5 = np.linalg.solve(A, b)
        coeffs.append((a0, a1, a2, float(a3), float(a4), float(a5)))
    return QuinticSegment(coeffs_x=coeffs[0], coeffs_y=coeffs[1], T=T)


def eval_quintic(seg: QuinticSegment, t: float) -> BoundaryState:
    """Evaluate position, velocity and acceleration at time t in [0, T]."""
    if not -1e-9 <= t <= seg.T + 1e-9:
        raise ValueError("evaluation time outside segment")
    pos, vel, acc = [], [], []
    for c in (seg.coeffs_x, seg.coeffs_y):
        a0, a1, a2, a3, a4, a5 = c
        t2, t3, t4, t5 = t * t, t ** 3, t ** 4, t ** 5
        pos.append(a0 + a1 * t + a2 * t2 + a3 * t3 + a4 * t4 + a5 * t5)
        vel.append(a1 + 2 * a2 * t + 3 * a3 * t2 + 4 * a4 * t3 + 5 * a5 * t4)
        acc.append(2 * a2 + 6 * a3 * t + 12 * a4 * t2 + 20 * a5 * t3)
    return BoundaryState(pos=(pos[0], pos[1]), vel=(vel[0], vel[1]), acc=(acc[0], acc[1]))


def default_pass_offset(half_width: float, min_separation: float = 7.5) -> float:
    """Default lateral offset for the guide constructions: at least the
    minimum lateral separation, or 60% of the corridor half width if wider.
    """
    return max(min_separation, 0.6 * half_width)


def _boundary_side_point(anchor: tuple[float, float], opp: tuple[float, float],
                         bounds: TrackBounds):
    """Closest point, near the anchor, on the boundary farther from the opponent."""
    left_pt, _ = closest_on(bounds.left, opp)
    right_pt, _ = closest_on(bounds.right, opp)
    chosen = farther_of(opp, left_pt, right_pt)
    boundary = bounds.left if chosen is left_pt else bounds.right
    pt, _ = closest_on(boundary, anchor)
    return pt


def overtake_guides(ego: VehicleState, opp: VehicleState, raceline: Raceline,
                    bounds: TrackBounds, params: VehicleParams,
                    lateral_offset: float | None = None,
                    forward_gap: float | None = None) -> OvertakeGuides:
    """Four overtake guide points.

    g0: ego's raceline projection. g1: opponent offset laterally toward the
    roomier boundary. g2: the same offset one forward gap ahead of the
    opponent. g3: raceline projection of the point one forward gap plus one
    car length ahead. The boundary side is picked once, from the opponent's
    position, so all offsets land on the same side.
    """
    if lateral_offset is None:
        lateral_offset = default_pass_offset((bounds.lat_left - bounds.lat_right) / 2)
    if forward_gap is None:
        # car length, not wheelbase: the merge leg must clear the whole car
        forward_gap = params.car_length
    opp_pos = (opp.x, opp.y)
    g0, _ = closest_on(raceline, (ego.x, ego.y))
    g1 = offset_toward(opp_pos, _boundary_side_point(opp_pos, opp_pos, bounds), lateral_offset)
    fwd = project_along(opp_pos, opp.phi, forward_gap)
    g2 = offset_toward(fwd, _boundary_side_point(fwd, opp_pos, bounds), lateral_offset)
    g3, _ = closest_on(raceline, project_along(opp_pos, opp.phi, forward_gap + params.car_length))
    guides = OvertakeGuides(g0=g0, g1=g1, g2=g2, g3=g3)
    for p in (g1, g2):
        _, lat = _project_lat(raceline, p)
        if not bounds.contains_lat(lat):
            raise InfeasiblePlanError("overtake guide outside track bounds")
    return guides


def defense_guides(ego: VehicleState, opp: VehicleState, raceline: Raceline,
                   bounds: TrackBounds, T_p: float, k_mult: float,
                   params: VehicleParams,
                   lateral_offset: float | None = None) -> DefenseGuides:
    """Three defense guide points plus the occupied superprojection.

    The opponent here is the attacker approaching from behind. i1 intercepts
    its projected pose T_p seconds ahead, biased toward its overtake side;
    the occupied target sits k_mult car lengths past that projection; i2
    returns to the raceline at the occupied station.
    """
    if T_p <= 0:
        raise ValueError("projection horizon T_p must be positive")
    if lateral_offset is None:
        lateral_offset = default_pass_offset((bounds.lat_left - bounds.lat_right) / 2)
    opp_pos = (opp.x, opp.y)
    ahead = opp.v * T_p
    i0, _ = closest_on(raceline, (ego.x, ego.y))
    proj = project_along(opp_pos, opp.phi, ahead)
    i1 = offset_toward(proj, _boundary_side_point(proj, opp_pos, bounds), lateral_offset)
    occupied = project_along(opp_pos, opp.phi, ahead + k_mult * params.car_length)
    i2, _ = closest_on(raceline, occupied)
    _, lat = _project_lat(raceline, i1)
    if not bounds.contains_lat(lat):
        raise InfeasiblePlanError("defense guide outside track bounds")
    return DefenseGuides(i0=i0, i1=i1, i2=i2, occupied=occupied)


def _project_lat(raceline: Raceline, p: tuple[float, float]) -> tuple[float, float]:
    """(arc_s, signed lateral offset) of a point in the raceline frame."""
    (px, py), arc = closest_on(raceline, p)
    h = raceline.heading_at(arc)
    lat = -(p[0] - px) * math.sin(h) + (p[1] - py) * math.cos(h)
    return arc, lat


def plan_trajectory(guides: list[tuple[float, float]], speed_plan: list[float],
                    sample_step: float, source: str,
                    raceline: Raceline | None = None,
                    bounds: TrackBounds | None = None,
                    check_progress: bool = True) -> PlannerOutput:
    """Piecewise quintic through consecutive guide points, sampled evenly.

    Joint velocities follow the chord headings at the planned speeds and
    joint accelerations are zero, so consecutive segments share boundary
    states exactly: C2 continuity by construction. Segment durations are
    chord length over mean planned speed.
    """
    if len(guides) < 2:
        raise ValueError("need at least 2 guide points")
    if len(speed_plan) != len(guides):
        raise ValueError("speed plan must match guide count")

    joints = _joint_states(guides, speed_plan)
    xs, ys, vs = [], [], []
    for i in range(len(guides) - 1):
        seg_T = _segment_duration(guides[i], guides[i + 1], speed_plan[i], speed_plan[i + 1])
        seg = fit_quintic(joints[i], joints[i + 1], seg_T)
        chord = math.dist(guides[i], guides[i + 1])
        n = max(int(math.ceil(chord / sample_step)), 2)
        include_end = i == len(guides) - 2
        steps = n + 1 if include_end else n
        for k in range(steps):
            t = seg_T * k / n
            st = eval_quintic(seg, t)
            xs.append(st.pos[0])
            ys.append(st.pos[1])
            frac = k / n
            vs.append((1 - frac) * speed_plan[i] + frac * speed_plan[i + 1])

    out = PlannerOutput(xs=np.asarray(xs), ys=np.asarray(ys), vs=np.asarray(vs), source=source)
    if raceline is not None:
        _validate_plan(out, raceline, bounds, check_progress)
    return out


def _joint_states(guides, speed_plan):
    """Boundary states at guide points: chord-heading velocities, zero acc.

    Interior joints take the direction of the shorter adjacent chord. A
    short chord means two guides that belong together (the hold portion of
    a maneuver); letting it dominate keeps that stretch flat instead of
    S-bowing through both points, which a central-difference heading does.
    """
    n = len(guides)
    chords = []
    for i in range(n - 1):
        cx = guides[i + 1][0] - guides[i][0]
        cy = guides[i + 1][1] - guides[i][1]
        ln = math.hypot(cx, cy)
        if ln < 1e-9:
            raise ValueError("coincident guide points")
        chords.append((cx, cy, ln))
    joints = []
    for i in range(n):
        if i == 0:
            hx, hy, ln = chords[0]
        elif i == n - 1:
            hx, hy, ln = chords[-1]
        else:
            before, after = chords[i - 1], chords[i]
            hx, hy, ln = before if before[2] <= after[2] else after
        v = speed_plan[i]
        joints.append(BoundaryState(pos=guides[i], vel=(v * hx / ln, v * hy / ln)))
    return joints


def _segment_duration(p0, p1, v0, v1) -> float:
    chord = math.dist(p0, p1)
    mean_v = max((v0 + v1) / 2.0, 1.0)
    return max(chord / mean_v, 1e-3)


def _validate_plan(out: PlannerOutput, raceline: Raceline, bounds: TrackBounds | None,
                   check_progress: bool) -> None:
    """Containment and monotonic-progress checks over the sampled plan."""
    cursor = RacelineCursor(raceline)
    cursor.seed(float(out.xs[0]), float(out.ys[0]))
    prev_arc = None
    total = raceline.total_length
    for i in range(len(out.xs)):
        _, _, arc, lat = cursor.project(float(out.xs[i]), float(out.ys[i]))
        if bounds is not None and not bounds.contains_lat(lat):
            raise InfeasiblePlanError("sampled plan point outside track bounds")
        if check_progress and prev_arc is not None:
            if wrap_arc(arc - prev_arc, total) <= 0:
                raise InfeasiblePlanError("plan doubles back along the raceline")
        prev_arc = arc


def overtake_times(geom: OvertakeGeometry) -> tuple[float, float, float]:
    """Submaneuver times of the trapezoidal overtake model.

    t_A diverges across the lateral gap, t_B clears the opponent's length,
    t_C merges back to front separation; all at the closing speed
    u_ego - u_opp + boost_fraction * u_boost.
    """
    du = geom.closing_speed()
    if du <= 0:
        raise InfeasiblePlanError("cannot close on the opponent")
    if geom.D_sepF < geom.L:
        raise ValueError("front separation smaller than car length")
    if not (0 < geom.theta1 < math.pi / 2 and 0 < geom.theta2 < math.pi / 2):
        raise ValueError("diverge/merge angles must be in (0, pi/2)")
    t_a = geom.y_gap / (du * math.cos(geom.theta1))
    t_b = geom.L / du
    t_c = (geom.D_sepF - geom.L) / (du * math.cos(geom.theta2))
    return t_a, t_b, t_c


def feasible_overtake(total_time: float, ip4: float, trig6: float) -> bool:
    """Budget gate: enough reserve to start and enough to finish."""
    return ip4 > trig6 and total_time <= ip4
