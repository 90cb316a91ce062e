"""Closed-loop raceline, track boundaries, passing zones and point helpers.

The track is a stadium oval: two straights joined by two semicircular turns,
driven counter-clockwise. The raceline is the centerline shifted onto a fixed
racing lane; boundaries sit at +-track_width/2. The two straights double as
the passing zones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Waypoint:
    x: float        # [m]
    y: float        # [m]
    v: float        # [m/s] desired speed

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("waypoint speed must be non-negative")


@dataclass
class Raceline:
    """Closed waypoint loop with per-waypoint speed setpoints.

    cum_s[i] is the arc length from waypoint 0 to waypoint i along the loop;
    the final segment from waypoint N-1 back to waypoint 0 closes the loop and
    is included in total_length.
    """
    xs: np.ndarray          # shape (N,)
    ys: np.ndarray          # shape (N,)
    vs: np.ndarray          # shape (N,)
    cum_s: np.ndarray       # shape (N,), cum_s[0] == 0, strictly increasing
    total_length: float     # [m]

    # segment caches, built once
    _seg_dx: np.ndarray = field(init=False, default=None, repr=False)
    _seg_dy: np.ndarray = field(init=False, default=None, repr=False)
    _seg_len2: np.ndarray = field(init=False, default=None, repr=False)

    def __post_init__(self):
        n = len(self.xs)
        if n < 3:
            raise ValueError("raceline needs at least 3 waypoints")
        if self.cum_s[0] != 0.0 or np.any(np.diff(self.cum_s) <= 0):
            raise ValueError("cum_s must start at 0 and increase strictly")
        if self.total_length <= 0:
            raise ValueError("total_length must be positive")
        # segment i runs waypoint i -> i+1 (wrapping)
        nxt_x = np.roll(self.xs, -1)
        nxt_y = np.roll(self.ys, -1)
        self._seg_dx = nxt_x - self.xs
        self._seg_dy = nxt_y - self.ys
        self._seg_len2 = np.maximum(self._seg_dx ** 2 + self._seg_dy ** 2, 1e-18)

    def __len__(self):
        return len(self.xs)

    @property
    def waypoints(self):
        return [Waypoint(float(x), float(y), float(v))
                for x, y, v in zip(self.xs, self.ys, self.vs)]

    def speed_at(self, arc_s: float) -> float:
        """Linear interpolation of the speed profile at arc position arc_s."""
        s = arc_s % self.total_length
        i = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        s0 = self.cum_s[i]
        if i == len(self.xs) - 1:
            seg = self.total_length - s0
            v1 = self.vs[0]
        else:
            seg = self.cum_s[i + 1] - s0
            v1 = self.vs[i + 1]
        t = (s - s0) / seg
        return float((1.0 - t) * self.vs[i] + t * v1)

    def point_at(self, arc_s: float) -> tuple[float, float]:
        """Point on the raceline at arc position arc_s (wrapped)."""
        s = arc_s % self.total_length
        i = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        t = (s - self.cum_s[i]) / math.sqrt(float(self._seg_len2[i]))
        return (float(self.xs[i] + t * self._seg_dx[i]),
                float(self.ys[i] + t * self._seg_dy[i]))

    def heading_at(self, arc_s: float) -> float:
        s = arc_s % self.total_length
        i = int(np.searchsorted(self.cum_s, s, side="right")) - 1
        return math.atan2(float(self._seg_dy[i]), float(self._seg_dx[i]))


@dataclass
class TrackBounds:
    left: np.ndarray        # shape (N, 2), closed loop, inside of the oval
    right: np.ndarray       # shape (N, 2), closed loop, outside
    # signed lateral corridor in the raceline frame (+ is track-left)
    lat_left: float = math.inf
    lat_right: float = -math.inf

    def contains_lat(self, lat: float, margin: float = 0.0) -> bool:
        return self.lat_right + margin <= lat <= self.lat_left - margin


@dataclass(frozen=True)
class PassingZone:
    s_start: float      # [m] arc length, inclusive
    s_end: float        # [m] exclusive

    def __post_init__(self):
        if not 0 <= self.s_start < self.s_end:
            raise ValueError("passing zone needs 0 <= s_start < s_end")


@dataclass(frozen=True)
class TrackConfig:
    straight_length: float = 400.0      # [m]
    turn_radius: float = 120.0          # [m] centerline radius of each turn
    track_width: float = 24.0           # [m]
    waypoint_spacing: float = 1.0       # [m]
    straight_speed: float = 62.0        # [m/s]
    corner_speed: float = 45.0          # [m/s]
    lane_offset: float = 3.0            # [m] raceline shift toward the inside (+left)
    accel_limit: float = 6.0            # [m/s^2] used to ramp the speed profile

    def __post_init__(self):
        for name in ("straight_length", "turn_radius", "track_width",
                     "waypoint_spacing", "straight_speed", "corner_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"track config field {name} must be positive")
        if abs(self.lane_offset) >= self.track_width / 2:
            raise ValueError("lane_offset must keep the raceline inside the track")


def build_oval_track(config: TrackConfig) -> tuple[Raceline, TrackBounds, list[PassingZone]]:
    """Build raceline, bounds and passing zones for a stadium oval.

    Layout (counter-clockwise): bottom straight (0,0)->(S,0), right turn
    around (S,R), top straight back, left turn around (0,R). The raceline is
    the centerline offset by lane_offset toward the inside (track-left for
    CCW travel), so its turn radii shrink to R - lane_offset. Passing zones
    cover the two straights, expressed in raceline arc length.
    """
    S, R = config.straight_length, config.turn_radius
    off = config.lane_offset
    r_lane = R - off
    arc_r = math.pi * r_lane
    race_len = 2 * S + 2 * arc_r
    n = max(int(round(race_len / config.waypoint_spacing)), 8)
    step = race_len / n

    xs = np.empty(n)
    ys = np.empty(n)
    corner = np.empty(n, dtype=bool)
    for i in range(n):
        s = i * step
        if s < S:                                       # bottom straight, heading +x
            xs[i], ys[i], corner[i] = s, off, False
        elif s < S + arc_r:                             # right turn around (S, R)
            ang = -math.pi / 2 + (s - S) / r_lane
            xs[i] = S + r_lane * math.cos(ang)
            ys[i] = R + r_lane * math.sin(ang)
            corner[i] = True
        elif s < 2 * S + arc_r:                         # top straight, heading -x
            xs[i], ys[i], corner[i] = S - (s - S - arc_r), 2 * R - off, False
        else:                                           # left turn around (0, R)
            ang = math.pi / 2 + (s - 2 * S - arc_r) / r_lane
            xs[i] = r_lane * math.cos(ang)
            ys[i] = R + r_lane * math.sin(ang)
            corner[i] = True

    seg = np.hypot(np.diff(xs, append=xs[:1]), np.diff(ys, append=ys[:1]))
    cum_s = np.concatenate(([0.0], np.cumsum(seg[:-1])))
    total = float(cum_s[-1] + seg[-1])

    vs = np.where(corner, config.corner_speed, config.straight_speed).astype(float)
    vs = _ramp_speed_profile(vs, seg, config.accel_limit)

    raceline = Raceline(xs=xs, ys=ys, vs=vs, cum_s=cum_s, total_length=total)

    half = config.track_width / 2
    bounds = TrackBounds(
        left=_offset_loop(xs, ys, half - off),
        right=_offset_loop(xs, ys, -(half + off)),
        lat_left=half - off,
        lat_right=-(half + off),
    )

    # passing zones: the two straights, in raceline arc length
    zones = [
        PassingZone(0.0, S),
        PassingZone(S + arc_r, 2 * S + arc_r),
    ]
    return raceline, bounds, zones


def _ramp_speed_profile(vs: np.ndarray, seg: np.ndarray, a_lim: float) -> np.ndarray:
    """Limit the speed profile's spatial rate so v^2 changes by <= 2*a*ds.

    Backward pass bounds braking into slow sections, forward pass bounds
    acceleration out of them; both wrap around the loop.
    """
    n = len(vs)
    v2 = vs.astype(float) ** 2
    for _ in range(2):      # two wraps reach a fixed point on a loop
        for i in range(n - 1, -1, -1):      # backward: approaching i can brake
            j = (i + 1) % n
            v2[i] = min(v2[i], v2[j] + 2 * a_lim * seg[i])
        for i in range(n):                  # forward: leaving i can accelerate
            j = (i + 1) % n
            v2[j] = min(v2[j], v2[i] + 2 * a_lim * seg[i])
    return np.sqrt(v2)


def _offset_loop(xs: np.ndarray, ys: np.ndarray, d: float) -> np.ndarray:
    """Offset a closed polyline laterally: +d to the left of travel."""
    dx = np.roll(xs, -1) - np.roll(xs, 1)
    dy = np.roll(ys, -1) - np.roll(ys, 1)
    norm = np.hypot(dx, dy)
    return np.stack([xs - d * dy / norm, ys + d * dx / norm], axis=1)


def closest_on(target, query: tuple[float, float]) -> tuple[tuple[float, float], float]:
    """Closest point on a polyline or raceline to the query point.

    Exact point-to-segment projection per segment; the lowest arc length wins
    ties. Returns ((x, y), arc_s).
    """
    if isinstance(target, Raceline):
        xs, ys = target.xs, target.ys
        dx, dy, len2 = target._seg_dx, target._seg_dy, target._seg_len2
        cum = target.cum_s
    else:
        pts = np.asarray(target, dtype=float)
        if len(pts) == 0:
            raise ValueError("empty polyline")
        if len(pts) == 1:
            return (float(pts[0, 0]), float(pts[0, 1])), 0.0
        xs, ys = pts[:-1, 0], pts[:-1, 1]
        dx = pts[1:, 0] - xs
        dy = pts[1:, 1] - ys
        len2 = np.maximum(dx ** 2 + dy ** 2, 1e-18)
        cum = np.concatenate(([0.0], np.cumsum(np.sqrt(len2))))[:-1]

    qx, qy = float(query[0]), float(query[1])
    t = ((qx - xs) * dx + (qy - ys) * dy) / len2
    np.clip(t, 0.0, 1.0, out=t)
    px = xs + t * dx
    py = ys + t * dy
    d2 = (px - qx) ** 2 + (py - qy) ** 2
    best = float(np.min(d2))
    # tie tolerance 1e-12 m^2, lowest arc length wins
    idx = int(np.flatnonzero(d2 <= best + 1e-12)[0])
    arc = float(cum[idx] + t[idx] * math.sqrt(float(len2[idx])))
    return (float(px[idx]), float(py[idx])), arc


class RacelineCursor:
    """Warm-started projection onto a raceline for per-tick queries.

    Searches a window of segments around the previous hit; exact within the
    window, and equal to closest_on for callers that move less than the
    window span between queries.
    """

    def __init__(self, raceline: Raceline, window: int = 48):
        self.line = raceline
        self.window = window
        self.idx = 0
        self._n = len(raceline.xs)

    def seed(self, x: float, y: float) -> None:
        """Global search to position the window; call once before warm use."""
        _, arc = closest_on(self.line, (x, y))
        i = int(np.searchsorted(self.line.cum_s, arc, side="right")) - 1
        self.idx = min(max(i, 0), self._n - 1)

    def project(self, x: float, y: float) -> tuple[float, float, float, float]:
        """Returns (px, py, arc_s, signed lateral offset), +lateral is track-left."""
        line = self.line
        ks = np.arange(self.idx - self.window, self.idx + self.window + 1) % self._n
        sx = line.xs[ks]
        sy = line.ys[ks]
        dx = line._seg_dx[ks]
        dy = line._seg_dy[ks]
        l2 = line._seg_len2[ks]
        t = ((x - sx) * dx + (y - sy) * dy) / l2
        np.clip(t, 0.0, 1.0, out=t)
        px = sx + t * dx
        py = sy + t * dy
        d2 = (px - x) ** 2 + (py - y) ** 2
        # same tie rule as closest_on: lowest scan index within tolerance
        j = int(np.flatnonzero(d2 <= float(np.min(d2)) + 1e-12)[0])
        i = int(ks[j])
        self.idx = i
        best_d2 = float(d2[j])
        pxj, pyj, tj = float(px[j]), float(py[j]), float(t[j])
        arc = float(line.cum_s[i]) + tj * math.sqrt(float(line._seg_len2[i]))
        # sign of the lateral offset: positive to the left of segment direction
        cross = (float(dx[j]) * (y - pyj) - float(dy[j]) * (x - pxj))
        lat = math.copysign(math.sqrt(best_d2), cross) if best_d2 > 0 else 0.0
        return pxj, pyj, arc, lat


def offset_toward(frm: tuple[float, float], toward: tuple[float, float], d: float) -> tuple[float, float]:
    """Point exactly d meters from `frm` along the ray toward `toward`."""
    dx = toward[0] - frm[0]
    dy = toward[1] - frm[1]
    if dx == 0.0 and dy == 0.0:
        raise ValueError("offset direction is degenerate: from == toward")
    theta = math.atan2(dy, dx)
    return (frm[0] + d * math.cos(theta), frm[1] + d * math.sin(theta))


def farther_of(anchor: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    """Select whichever of a, b lies farther from the anchor; b on a tie."""
    da = (a[0] - anchor[0]) ** 2 + (a[1] - anchor[1]) ** 2
    db = (b[0] - anchor[0]) ** 2 + (b[1] - anchor[1]) ** 2
    return a if da > db else b


def project_along(frm: tuple[float, float], theta: float, d: float) -> tuple[float, float]:
    """Project d meters from `frm` along absolute heading theta."""
    return (frm[0] + d * math.cos(theta), frm[1] + d * math.sin(theta))


def wrap_arc(ds: float, total_length: float) -> float:
    """Wrap an arc-length difference into (-total/2, +total/2]."""
    half = total_length / 2
    ds = ds % total_length
    if ds > half:
        ds -= total_length
    return ds


def arc_separation(raceline: Raceline, ego: tuple[float, float], opp: tuple[float, float]) -> float:
    """Signed arc distance from ego to opponent; positive = opponent ahead."""
    _, s_ego = closest_on(raceline, ego)
    _, s_opp = closest_on(raceline, opp)
    return wrap_arc(s_opp - s_ego, raceline.total_length)


def in_passing_zone(zones: list[PassingZone], arc_s: float) -> bool:
    """True iff arc_s falls inside any zone; [s_start, s_end) convention."""
    for z in zones:
        if z.s_start <= arc_s < z.s_end:
            return True
    return False
