"""Race control: flags, leader determination, opponent-intent word, rules R1-R5.

The estimator here is the only source of the opponent-intent word the
automaton guards read, and it observes nothing but what a real car could
measure: the opponent's arc separation and lateral offset over a short
window. Rule enforcement never touches automaton state directly; breaches
surface as violations plus forced events the harness feeds back through the
normal abandon and fallback guards.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .automata import (
    BLACK_FLAG,
    BLUE_FLAG,
    GREEN_FLAG,
    FlagColor,
    OPP_ABANDONED,
    OPP_ATTEMPTING,
    OPP_BLOCKING,
    OPP_FALLBACK,
    RaceFlag,
)
from .track import in_passing_zone, wrap_arc
from .vehicle import VehicleParams, VehicleState


@dataclass
class RaceProgress:
    """Lap count, current arc position and total distance for one car."""
    laps: int = 0
    arc_s: float = 0.0
    cumulative_distance: float = 0.0

    def advance(self, new_arc: float, track_length: float) -> None:
        ds = wrap_arc(new_arc - self.arc_s, track_length)
        if ds > 0 and new_arc < self.arc_s:
            self.laps += 1
        if ds > 0:
            self.cumulative_distance += ds
        self.arc_s = new_arc


@dataclass(frozen=True)
class RuleBook:
    """Numeric limits behind the five race rules.

    The attacker is granted the wider observation radius; block attempts are
    counted per overtake episode; fatigue distances are measured from the
    launch signal along the raceline.
    """
    observation_radius_attacker: float = 150.0
    observation_radius_defender: float = 100.0
    max_block_attempts: int = 2
    safety_distance: float = 7.5
    boost_grant: float = 20.0
    fatigue_distance_attacker: float = 1200.0
    fatigue_distance_defender: float = 400.0

    def __post_init__(self):
        values = (self.observation_radius_attacker, self.observation_radius_defender,
                  self.max_block_attempts, self.safety_distance, self.boost_grant,
                  self.fatigue_distance_attacker, self.fatigue_distance_defender)
        if any(v <= 0 for v in values):
            raise ValueError("rule limits must all be positive")
        if self.observation_radius_attacker <= self.observation_radius_defender:
            raise ValueError("attacker observation radius must exceed the defender's")


@dataclass(frozen=True)
class Violation:
    t: float
    car_id: int
    rule: str
    detail: str


@dataclass(frozen=True)
class ForcedEvent:
    t: float
    car_id: int
    kind: str       # force_abandon | force_fallback | deny_boost


def update_flag(progress: dict, zones, laps_total: int) -> dict:
    """Per-car flag: Blue inside a passing zone, Green outside, Black done.

    Black goes to both cars as soon as either has completed the race.
    """
    if any(p.laps >= laps_total for p in progress.values()):
        return {car: BLACK_FLAG for car in progress}
    flags = {}
    for car, p in progress.items():
        flags[car] = BLUE_FLAG if in_passing_zone(zones, p.arc_s) else GREEN_FLAG
    return flags


def leader_flag(progress: dict, previous: dict) -> dict:
    """Leadership by lexicographic (laps, arc position); ties keep the holder."""
    (a, pa), (b, pb) = sorted(progress.items())
    ka, kb = (pa.laps, pa.arc_s), (pb.laps, pb.arc_s)
    if ka > kb:
        lead = a
    elif kb > ka:
        lead = b
    else:
        lead = a if previous.get(a) else b
    return {a: lead == a, b: lead == b}


@dataclass(frozen=True)
class EstimatorConfig:
    offset_threshold: float = 1.5       # [m] lateral offset that reads as intent
    closing_threshold: float = 0.5      # [m/s] closing speed for an attempt
    convergence_threshold: float = 0.2  # [m/s] lateral return rate that reads as yielding
    window: float = 1.0                 # [s] observation window


class OpponentEstimator:
    """Classifies the opponent into the one-hot intent word from raw motion.

    Keeps a short history of (time, separation, lateral offset) samples and a
    sticky memory of whether an attempt or a block was previously seen, so
    the abandoned and fallback words can be distinguished from their active
    counterparts. Out-of-radius opponents produce a zero word and drop the
    history (R1).
    """

    def __init__(self, rules: RuleBook | None = None,
                 config: EstimatorConfig | None = None):
        self.rules = rules or RuleBook()
        self.config = config or EstimatorConfig()
        self._history = deque()
        self._was_attempting = False
        self._was_blocking = False

    def reset(self) -> None:
        self._history.clear()
        self._was_attempting = False
        self._was_blocking = False

    def observe(self, t: float, separation: float, opp_lat: float,
                opp_is_leader: bool, observer_is_leader: bool,
                my_side: int = 0) -> int:
        """One estimation tick; separation positive when the opponent is ahead."""
        cfg = self.config
        radius = (self.rules.observation_radius_defender if observer_is_leader
                  else self.rules.observation_radius_attacker)
        if abs(separation) > radius:
            self._history.clear()
            return 0
        self._history.append((t, separation, opp_lat))
        while self._history and self._history[0][0] < t - cfg.window:
            self._history.popleft()
        if len(self._history) < 2:
            return 0

        t0, sep0, lat0 = self._history[0]
        dt = t - t0
        if dt <= 0:
            return 0
        closing = (abs(sep0) - abs(separation)) / dt
        converge = (abs(lat0) - abs(opp_lat)) / dt
        offset = abs(opp_lat) > cfg.offset_threshold
        converging = converge > cfg.convergence_threshold

        word = 0
        if separation > 0:
            # opponent ahead: blocking / fallback side
            if self._was_blocking and (converging or not opp_is_leader):
                word = OPP_FALLBACK
            elif (opp_is_leader and offset and not converging
                  and (my_side == 0 or math.copysign(1, opp_lat) == my_side)):
                word = OPP_BLOCKING
                self._was_blocking = True
            if abs(opp_lat) < 0.5 * cfg.offset_threshold:
                self._was_blocking = False
        elif separation < 0:
            # opponent behind: attempting / abandoned side
            if self._was_attempting and converging:
                word = OPP_ABANDONED
            elif offset and not opp_is_leader and closing > cfg.closing_threshold:
                word = OPP_ATTEMPTING
                self._was_attempting = True
            if abs(opp_lat) < 0.5 * cfg.offset_threshold:
                self._was_attempting = False
        return word


# --- footprint clearance (R3) ----------------------------------------------

def _rect_corners(state: VehicleState, length: float, width: float):
    c, s = math.cos(state.phi), math.sin(state.phi)
    hl, hw = 0.5 * length, 0.5 * width
    return [(state.x + c * dx - s * dy, state.y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))]


def _project(corners, ax, ay):
    dots = [x * ax + y * ay for x, y in corners]
    return min(dots), max(dots)


def _rects_overlap(a, b) -> bool:
    # separating-axis test over both rectangles' edge normals
    for poly in (a, b):
        for i in range(4):
            x1, y1 = poly[i]
            x2, y2 = poly[(i + 1) % 4]
            ax, ay = y2 - y1, x1 - x2
            amin, amax = _project(a, ax, ay)
            bmin, bmax = _project(b, ax, ay)
            if amax < bmin or bmax < amin:
                return False
    return True


def _segment_distance(p1, p2, p3, p4) -> float:
    def point_seg(px, py, ax, ay, bx, by):
        vx, vy = bx - ax, by - ay
        ll = vx * vx + vy * vy
        if ll == 0:
            return math.hypot(px - ax, py - ay)
        u = max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / ll))
        return math.hypot(px - (ax + u * vx), py - (ay + u * vy))

    return min(point_seg(*p1, *p3, *p4), point_seg(*p2, *p3, *p4),
               point_seg(*p3, *p1, *p2), point_seg(*p4, *p1, *p2))


def footprint_clearance(state_a: VehicleState, state_b: VehicleState,
                        params: VehicleParams) -> float:
    """Minimum distance between the two cars' oriented rectangles; 0 on overlap."""
    a = _rect_corners(state_a, params.car_length, params.car_width)
    b = _rect_corners(state_b, params.car_length, params.car_width)
    if _rects_overlap(a, b):
        return 0.0
    best = math.inf
    for i in range(4):
        ea = (a[i], a[(i + 1) % 4])
        for j in range(4):
            eb = (b[j], b[(j + 1) % 4])
            best = min(best, _segment_distance(ea[0], ea[1], eb[0], eb[1]))
    return best


# --- rule enforcement ------------------------------------------------------

class ManeuverLedger:
    """Per-car maneuver bookkeeping the rule checks read.

    The harness notes launches and exits as the automaton transitions; block
    attempts accumulate within one opponent overtake episode and reset when
    that episode ends.
    """

    def __init__(self, car_ids=(0, 1)):
        self.car_ids = tuple(car_ids)
        self.kind = {c: None for c in car_ids}
        self.launch_cumulative = {c: 0.0 for c in car_ids}
        self.block_attempts = {c: 0 for c in car_ids}
        self.fatigue_flagged = {c: False for c in car_ids}
        self.r2_flagged = {c: False for c in car_ids}
        self.r3_breach_open = False

    def other(self, car):
        a, b = self.car_ids
        return b if car == a else a

    def note_launch(self, car, kind: str, cumulative_distance: float) -> None:
        self.kind[car] = kind
        self.launch_cumulative[car] = cumulative_distance
        self.fatigue_flagged[car] = False
        if kind == "block":
            self.block_attempts[car] += 1

    def note_exit(self, car) -> None:
        if self.kind[car] == "pass":
            opp = self.other(car)
            self.block_attempts[opp] = 0
            self.r2_flagged[opp] = False
        self.kind[car] = None

    def reset(self) -> None:
        for c in self.car_ids:
            self.kind[c] = None
            self.block_attempts[c] = 0
            self.fatigue_flagged[c] = False
            self.r2_flagged[c] = False
        self.r3_breach_open = False


@dataclass
class WorldView:
    """Snapshot of everything the rule checks need for one tick."""
    t: float
    vehicle_states: dict
    progress: dict
    leaders: dict
    in_zone: dict
    boost_requests: dict = field(default_factory=dict)


# a new R3 breach is only logged after clearance recovers past this margin,
# so one sustained proximity episode counts once
R3_RELEASE_MARGIN = 0.5


def enforce_rules(world: WorldView, rules: RuleBook, ledger: ManeuverLedger,
                  params: VehicleParams) -> tuple[list, list]:
    """Check R2-R5 for one tick; R1 lives in the estimator's radius gate.

    Returns (violations, forced_events). Forced events are requests: the
    harness routes them through the normal abandon/fallback guards.
    """
    violations = []
    forced = []

    for car in ledger.car_ids:
        kind = ledger.kind[car]
        if kind is None:
            continue
        # R5: fatigue by arc distance since the launch signal
        limit = (rules.fatigue_distance_attacker if kind == "pass"
                 else rules.fatigue_distance_defender)
        traveled = world.progress[car].cumulative_distance - ledger.launch_cumulative[car]
        if traveled > limit:
            if not ledger.fatigue_flagged[car]:
                violations.append(Violation(world.t, car, "R5",
                                            f"maneuver distance {traveled:.0f}m > {limit:.0f}m"))
                ledger.fatigue_flagged[car] = True
            forced.append(ForcedEvent(world.t, car,
                                      "force_abandon" if kind == "pass" else "force_fallback"))
        # R2: block attempts within one overtake episode
        if kind == "block" and ledger.block_attempts[car] > rules.max_block_attempts:
            if not ledger.r2_flagged[car]:
                violations.append(Violation(world.t, car, "R2",
                                            f"block attempt {ledger.block_attempts[car]} > "
                                            f"{rules.max_block_attempts}"))
                ledger.r2_flagged[car] = True
            forced.append(ForcedEvent(world.t, car, "force_fallback"))

    # R3: footprint clearance, charged to the attacker
    cars = ledger.car_ids
    sa, sb = world.vehicle_states[cars[0]], world.vehicle_states[cars[1]]
    half_diag = math.hypot(params.car_length, params.car_width)
    center_gap = math.hypot(sa.x - sb.x, sa.y - sb.y) - half_diag
    if center_gap <= rules.safety_distance + R3_RELEASE_MARGIN:
        clearance = footprint_clearance(sa, sb, params)
        if clearance < rules.safety_distance:
            if not ledger.r3_breach_open:
                attacker = next((c for c in cars if not world.leaders.get(c)), cars[0])
                violations.append(Violation(world.t, attacker, "R3",
                                            f"clearance {clearance:.2f}m < "
                                            f"{rules.safety_distance}m"))
                ledger.r3_breach_open = True
        elif clearance > rules.safety_distance + R3_RELEASE_MARGIN:
            ledger.r3_breach_open = False
    else:
        ledger.r3_breach_open = False

    # R4: boost only inside passing zones; a denied request must not drain
    for car, requested in world.boost_requests.items():
        if requested and not world.in_zone.get(car):
            forced.append(ForcedEvent(world.t, car, "deny_boost"))

    return violations, forced
