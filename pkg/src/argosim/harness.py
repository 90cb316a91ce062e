"""Deterministic lockstep race loop wiring every module for both cars.

One race is one fixed-dt loop. Per tick: race control produces flags,
leadership, intent words and rule enforcement from the previous tick's
poses; then each car (car 0 first) ticks its automaton network, refreshes
its maneuver plan, solves the path tracker at the slower control cadence
(holding the last command in between), and integrates the bicycle model.
The only randomness is the seeded jitter applied once to the starting gap
and lateral offset, so a config plus a seed fixes the whole race.

Maneuver plans are built here, not in the automatons: the bus carries
lightweight payload tags and the harness regenerates the actual sampled
trajectory from live poses while an override is active. Pass plans run at
the boosted speed cap and hold the chosen lane until the opponent is far
enough behind that merging cannot pinch the safety clearance. A blocking
defender commits to one side for the whole episode (its machine has no
re-block edge), so a blocked attacker reroutes at most once, to the side
the block left open. Abandon plans brake harder than fallback plans so two
mutually yielding cars cannot stalemate.

Session end: once the lap count completes, the black flag is withheld
until neither car is mid-maneuver (new launches are frozen meanwhile), so
every engaged episode resolves and the cross-car bookkeeping stays exact.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass

from .automata import (
    ArgosState,
    AutomataNetwork,
    AutoPassState,
    AuxInputs,
    FlagColor,
    FrameworkInvariantError,
    FscTag,
    InputFrame,
    KavalState,
    OPP_ABANDONED,
    OPP_ATTEMPTING,
    OPP_BLOCKING,
    ReferenceTag,
    fsc_of,
)
from .config import CarConfig, ScenarioConfig, SweepConfig
from .planner import (
    InfeasiblePlanError,
    OvertakeGeometry,
    feasible_overtake,
    overtake_times,
    plan_trajectory,
)
from .race_control import (
    ManeuverLedger,
    OpponentEstimator,
    WorldView,
    enforce_rules,
    leader_flag,
    update_flag,
)
from .track import RacelineCursor, build_oval_track, in_passing_zone
from .tracker import PathTracker
from .vehicle import (
    AemsReservoir,
    Command,
    VehicleState,
    aems_drain,
    aems_lap_reset,
    clamp_command,
    speed_limit,
    step as vehicle_step,
)
from .verification import TraceEvent, verify_race

TRACKER_PERIOD = 0.1            # [s] command refresh cadence
FOLLOW_GAIN = 0.35              # [1/s] station-keeping speed gain
CLOSING_RESERVE = 4.0           # [s] budget kept back from the closing boost
ABANDON_BRAKE = 6.0             # [m/s] abandon speed deficit vs the opponent
FALLBACK_BRAKE = 3.0            # [m/s] fallback deficit (gentler on purpose)
PLAN_SAFETY_FACTOR = 1.3        # margin on the estimated pass distance
COMPLETION_MARGIN = 60.0        # [m] zone reserved past the estimated pass
DIVERGE_ANGLE = 0.3             # [rad] trapezoid model angles
BOUNDS_MARGIN = 1.5             # [m] lateral kept clear of the walls
GUIDE_SPACING = (25.0, 60.0)    # [m] forward spacing of held-lane guides
LAT_SLEW = 0.28                 # [m/m] steepest lateral slope a plan may ask for
ABANDON_CONFIRM = 1.2           # [s] surrender word must persist this long
REROUTE_MIN_SEP = 8.0           # [m] room needed to swap lanes around a block
PENDING_BLACK_CAP = 60.0        # [s] ceiling on the withheld session-end flag

_COAST = Command(a=0.0, delta=0.0)


def _wrap_signed(d: float, total: float) -> float:
    d %= total
    if d > total / 2:
        d -= total
    return d


def _zone_end(zones, arc: float):
    for z in zones:
        if z.s_start <= arc < z.s_end:
            return z.s_end
    return None


def _near_zone(zones, arc: float, total: float, lead: float) -> bool:
    """Inside a zone, or within lead meters of reaching the next one."""
    for z in zones:
        if z.s_start <= arc < z.s_end:
            return True
        if 0.0 <= (z.s_start - arc) % total <= lead:
            return True
    return False


class _EventWriter:
    """Append-only JSONL sink with deterministic serialization."""

    def __init__(self, fh=None):
        self.fh = fh
        self.rows = []

    def emit(self, t: float, car, kind: str, payload: dict) -> None:
        row = {"t": round(t, 6), "car": car, "kind": kind, "payload": payload}
        self.rows.append(row)
        if self.fh is not None:
            self.fh.write(json.dumps(row, sort_keys=True) + "\n")


class CarRuntime:
    """Mutable per-car state the loop advances."""

    def __init__(self, car_id: int, cfg: CarConfig, scenario: ScenarioConfig,
                 raceline, bounds, zones):
        self.car_id = car_id
        self.cfg = cfg
        self.is_argos = cfg.policy == "argos"
        self.raceline = raceline
        self.bounds = bounds
        self.zones = zones
        self.state = VehicleState(0.0, 0.0, 0.0, 0.0)
        self.reservoir = AemsReservoir(budget=scenario.rules.boost_grant,
                                       per_lap_grant=scenario.rules.boost_grant)
        from .race_control import RaceProgress
        self.progress = RaceProgress()
        self.cursor = RacelineCursor(raceline)
        self.tracker = PathTracker(cfg.tracker, cfg.vehicle)
        self.estimator = OpponentEstimator(scenario.rules)
        self.network = (AutomataNetwork(car_id, scenario.network_config(car_id),
                                        global_speed_ref="raceline",
                                        global_path_ref="raceline")
                        if self.is_argos else None)
        self.held = _COAST
        self.arc = 0.0
        self.lat = 0.0
        self.active_plan = None         # PlannerOutput while overriding
        self.launch_plan = None         # pre-built pass plan, installed at launch
        self.launch_plan_tick = -10**9
        self.pass_side = 0              # +1 left, -1 right, 0 when idle
        self.rerouted = False           # one lane swap allowed per episode
        self.block_side = 0             # committed defense side for the episode
        self.opportunities = [0, 0]     # overtake, defense
        self.wait_counted = False
        self.attempt_seen_t = -1e9      # last time the opponent read as attacking
        self.abandoned_since = None     # first tick of an unbroken surrender read
        self.laps_seen = 0
        self.lap_start_t = 0.0
        self.lap_times = []
        self.boost_used = 0.0
        self.flag = None
        self.word = 0

    def project(self) -> None:
        _, _, arc, lat = self.cursor.project(self.state.x, self.state.y)
        self.arc, self.lat = arc, lat

    def clear_episode(self) -> None:
        self.active_plan = None
        self.pass_side = 0
        self.rerouted = False
        self.block_side = 0


# --- plan construction -----------------------------------------------------

def _lat_point(raceline, arc: float, lat: float):
    x, y = raceline.point_at(arc)
    h = raceline.heading_at(arc)
    return (x - lat * math.sin(h), y + lat * math.cos(h))


def _side_capacity(bounds, side: int) -> float:
    room = bounds.lat_left if side > 0 else -bounds.lat_right
    return max(room - BOUNDS_MARGIN, 1.0)


def _roomy_side(bounds) -> int:
    return 1 if bounds.lat_left > -bounds.lat_right else -1


def _pass_lat(cfg: CarConfig, bounds, side: int) -> float:
    return side * min(cfg.lateral_offset, _side_capacity(bounds, side))


def _slew_lat(current: float, desired: float, ds: float) -> float:
    # a rebuilt plan may only demand the lateral change the spline span can
    # feasibly carry; an unclamped reroute swing sends the tracker unstable
    swing = LAT_SLEW * ds
    return current + max(-swing, min(desired - current, swing))


def _plan(raceline, bounds, guides, speeds, source: str):
    return plan_trajectory(guides, speeds, sample_step=2.0, source=source,
                           raceline=raceline, bounds=bounds)


def _merge_trigger(cfg: CarConfig, trig) -> float:
    # opponent must be this far behind before the merge may cross its lane
    return trig.safety_clearance + cfg.vehicle.car_length + 1.6


def build_pass_plan(run: CarRuntime, opp: CarRuntime, sep: float, trig):
    """Phase-aware overtake override, rebuilt from live poses.

    The lane is held at the boosted cap until the opponent is decisively
    behind; the bicycle model has no grip limit, so overspeed never costs
    line, and only the merge guides fall back to the profile speeds.
    """
    cfg, rl, bounds = run.cfg, run.raceline, run.bounds
    total = rl.total_length
    ego = (run.state.x, run.state.y)
    if run.pass_side == 0:
        side = _roomy_side(bounds)
        if abs(opp.lat) > 1.5:
            side = -1 if opp.lat > 0 else 1
        run.pass_side = side
    lat = _pass_lat(cfg, bounds, run.pass_side)

    v_target = cfg.vehicle.v_max + cfg.vehicle.u_boost
    if sep <= -_merge_trigger(cfg, trig):
        # far enough past: drift back toward the raceline, still flat out;
        # the completion gate fires on separation, and slowing here would
        # stall it right at the finish line of the maneuver
        a1 = (run.arc + 40.0) % total
        a2 = (run.arc + 90.0) % total
        guides = [ego, _lat_point(rl, a1, _slew_lat(run.lat, lat * 0.3, 40.0)),
                  _lat_point(rl, a2, _slew_lat(run.lat, 0.0, 90.0))]
    else:
        # pull out and hold the offset lane flat out past the opponent
        a1 = (run.arc + GUIDE_SPACING[0]) % total
        a2 = (run.arc + GUIDE_SPACING[1]) % total
        guides = [ego,
                  _lat_point(rl, a1, _slew_lat(run.lat, lat, GUIDE_SPACING[0])),
                  _lat_point(rl, a2, _slew_lat(run.lat, lat, GUIDE_SPACING[1]))]
    speeds = [max(run.state.v, 1.0), v_target, v_target]
    return _plan(rl, bounds, guides, speeds, "overtake")


def build_abandon_plan(run: CarRuntime, opp: CarRuntime, sep: float, trig):
    """Give up the pass: drop behind hard, then merge back in line."""
    cfg, rl, bounds = run.cfg, run.raceline, run.bounds
    total = rl.total_length
    ego = (run.state.x, run.state.y)
    # clamp by own profile: the opponent may be boosting, and a yield speed
    # must open the gap, not chase the boost
    slow = max(min(opp.state.v, rl.speed_at(run.arc)) - ABANDON_BRAKE, 5.0)
    if sep < trig.follow_min - 10.0:
        # opponent not yet far enough ahead: freeze the lane, shed speed;
        # steering anywhere while alongside eats the R3 clearance
        a1 = (run.arc + GUIDE_SPACING[0]) % total
        a2 = (run.arc + GUIDE_SPACING[1]) % total
        guides = [ego, _lat_point(rl, a1, run.lat),
                  _lat_point(rl, a2, run.lat * 0.9)]
        speeds = [max(run.state.v, 1.0), slow, slow]
    else:
        a1 = (run.arc + 35.0) % total
        a2 = (run.arc + 80.0) % total
        guides = [ego, _lat_point(rl, a1, _slew_lat(run.lat, 0.0, 35.0)),
                  _lat_point(rl, a2, _slew_lat(run.lat, 0.0, 80.0))]
        speeds = [max(run.state.v, 1.0), slow,
                  min(rl.speed_at(run.arc), slow + 2.0)]
    return _plan(rl, bounds, guides, speeds, "overtake")


def build_block_plan(run: CarRuntime, opp: CarRuntime, trig):
    """Occupy the committed lane ahead of the attacker, at race pace."""
    cfg, rl, bounds = run.cfg, run.raceline, run.bounds
    total = rl.total_length
    ego = (run.state.x, run.state.y)
    if run.block_side == 0:
        if abs(opp.lat) > 1.5:
            run.block_side = 1 if opp.lat > 0 else -1   # attacker committed
        else:
            run.block_side = _roomy_side(bounds)        # the side it would pick
    side = run.block_side
    lat = side * min(cfg.lateral_offset * 0.8, _side_capacity(bounds, side))
    a1 = (run.arc + GUIDE_SPACING[0]) % total
    a2 = (run.arc + GUIDE_SPACING[1]) % total
    guides = [ego,
              _lat_point(rl, a1, _slew_lat(run.lat, lat, GUIDE_SPACING[0])),
              _lat_point(rl, a2, _slew_lat(run.lat, lat * 0.9,
                                           GUIDE_SPACING[1]))]
    speeds = [max(run.state.v, 1.0), rl.speed_at(a1), rl.speed_at(a2)]
    return _plan(rl, bounds, guides, speeds, "defense")


def build_fallback_plan(run: CarRuntime, opp: CarRuntime, sep: float, trig):
    """Yield the position: ease off, recentre once the opponent is clear."""
    cfg, rl, bounds = run.cfg, run.raceline, run.bounds
    total = rl.total_length
    ego = (run.state.x, run.state.y)
    # same profile clamp as the abandon path: the passing opponent is
    # usually boosting, and opp.v - brake would command a chase
    slow = max(min(opp.state.v, rl.speed_at(run.arc)) - FALLBACK_BRAKE, 5.0)
    if -_merge_trigger(cfg, trig) < sep < trig.follow_min - 10.0:
        # opponent alongside or barely past: freeze the lane while the
        # speed gap opens the distance, the raceline can wait
        a1 = (run.arc + GUIDE_SPACING[0]) % total
        a2 = (run.arc + GUIDE_SPACING[1]) % total
        guides = [ego, _lat_point(rl, a1, run.lat),
                  _lat_point(rl, a2, run.lat * 0.9)]
        speeds = [max(run.state.v, 1.0), slow, slow]
    else:
        a1 = (run.arc + 35.0) % total
        a2 = (run.arc + 80.0) % total
        guides = [ego, _lat_point(rl, a1, _slew_lat(run.lat, 0.0, 35.0)),
                  _lat_point(rl, a2, _slew_lat(run.lat, 0.0, 80.0))]
        speeds = [max(run.state.v, 1.0), slow,
                  min(rl.speed_at(run.arc), slow + 2.0)]
    return _plan(rl, bounds, guides, speeds, "defense")


def _estimate_pass_distance(run: CarRuntime, opp: CarRuntime, trig):
    """Trapezoid-model estimate of the ground a pass covers, or None.

    Deliberately the coarse launch-time yardstick: both cars at the zone's
    cruise pace so the closing speed is exactly the boost, no acceleration
    phase. The safety factor and completion margin layered on top absorb
    what it leaves out. Momentary profile-ramp speed differences must not
    enter here: they would swing the estimate wildly right at the zone
    entry, which is exactly where launches have to happen.
    """
    cfg = run.cfg
    end = _zone_end(run.zones, run.arc)
    if end is None:
        return None
    pace = run.raceline.speed_at((run.arc + end) / 2.0)
    lat = abs(_pass_lat(cfg, run.bounds,
                        run.pass_side or _roomy_side(run.bounds)))
    geom = OvertakeGeometry(
        y_gap=max(lat - abs(opp.lat), 2.0),
        theta1=DIVERGE_ANGLE, theta2=DIVERGE_ANGLE,
        L=cfg.vehicle.car_length,
        D_sepF=trig.complete_lead + cfg.vehicle.car_length,
        u_ego=pace,
        u_opp=pace,
        u_boost=cfg.vehicle.u_boost)
    try:
        t_total = sum(overtake_times(geom))
    except (InfeasiblePlanError, ValueError):
        return None
    if not feasible_overtake(t_total, run.reservoir.budget,
                             trig.boost_launch_floor):
        return None
    return (geom.u_ego + geom.u_boost) * t_total


def overtake_viable(run: CarRuntime, opp: CarRuntime, trig,
                    black_pending: bool) -> bool:
    """Launch gate sideband: budgeted, plannable, resolvable in this zone.

    The zone margin covers the whole episode including the stretch the
    beaten defender still needs to fall clear after completion, so an
    engaged episode is never split by the zone boundary.
    """
    if black_pending:
        return False
    dist = _estimate_pass_distance(run, opp, trig)
    if dist is None:
        return False
    end = _zone_end(run.zones, run.arc)
    if end is None:
        return False
    remaining = end - run.arc
    return dist * PLAN_SAFETY_FACTOR + COMPLETION_MARGIN <= remaining


def defense_viable(run: CarRuntime, t: float, black_pending: bool) -> bool:
    # block only a car that is actually coming: recent attempt evidence
    return not black_pending and (t - run.attempt_seen_t) <= 0.6


def _maneuvering(states) -> bool:
    return (states.autopass in (AutoPassState.PASS, AutoPassState.ABANDON)
            or states.kaval in (KavalState.BLOCK, KavalState.FALLBACK))


# --- race loop -------------------------------------------------------------

@dataclass
class SimResult:
    verdict: object
    counters: dict
    traces: dict
    events: list                    # full per-tick tag stream (argos cars)
    log_rows: list
    lap_times: dict
    violations: list
    denials: int
    boost_used: dict
    final_progress: dict
    winner: int
    ticks: int
    race_time: float


@dataclass(frozen=True)
class RunArtifacts:
    event_log: str
    odometry: str
    summary: str


def simulate(scenario: ScenarioConfig, log_fh=None, odo_fh=None) -> SimResult:
    """Run one race; returns everything the summary and the tests need.

    File handles are optional: sweeps run entirely in memory.
    """
    raceline, bounds, zones = build_oval_track(scenario.track)
    total = raceline.total_length
    dt = scenario.sim_dt
    solve_every = max(int(round(TRACKER_PERIOD / dt)), 1)
    rng = random.Random(scenario.seed)

    front, back = scenario.starting_order
    gap = scenario.initial_gap
    if scenario.gap_jitter:
        gap = max(5.0, gap + rng.uniform(-scenario.gap_jitter,
                                         scenario.gap_jitter))
    start_lat = {front: 0.0, back: 0.0}
    if scenario.lat_jitter:
        for c in (front, back):
            start_lat[c] = rng.uniform(-scenario.lat_jitter, scenario.lat_jitter)

    cars = [CarRuntime(i, scenario.cars[i], scenario, raceline, bounds, zones)
            for i in (0, 1)]
    for car, arc in ((front, scenario.start_arc % total),
                     (back, (scenario.start_arc - gap) % total)):
        run = cars[car]
        x, y = _lat_point(raceline, arc, start_lat[car])
        run.state = VehicleState(x=x, y=y, phi=raceline.heading_at(arc),
                                 v=raceline.speed_at(arc))
        run.cursor.seed(x, y)
        run.project()
        run.progress.arc_s = run.arc

    log = _EventWriter(log_fh)
    ledger = ManeuverLedger()
    leaders = {front: True, back: False}
    events = []                      # per-tick tag stream for verification
    violations = []
    denials = 0
    black_pending_since = None
    black_issued = False
    prev_flags = {}
    prev_op0 = {0: 0, 1: 0}
    max_ticks = int((scenario.laps + 1) * total / 8.0 / dt) + int(90.0 / dt)

    if odo_fh is not None:
        odo_fh.write("t,car,x,y,phi,v,arc_s,lat,budget,fsc\n")

    tick = 0
    while True:
        if tick > max_ticks:
            raise FrameworkInvariantError("race failed to terminate")
        t = tick * dt

        # --- snapshot phase: flags, leadership, words, rules ---------------
        progress = {i: cars[i].progress for i in (0, 1)}
        leaders = leader_flag(progress, leaders)
        flags = update_flag(progress, zones, scenario.laps)
        black_pending = False
        if all(f.color is FlagColor.BLACK for f in flags.values()) \
                and not black_issued:
            maneuvering = any(c.network is not None
                              and _maneuvering(c.network.states) for c in cars)
            if black_pending_since is None:
                black_pending_since = t
            if maneuvering and t - black_pending_since <= PENDING_BLACK_CAP:
                # hold the session-end flag until the maneuvers resolve
                flags = update_flag(progress, zones, scenario.laps + 1)
                black_pending = True
            else:
                black_issued = True

        for i, run in enumerate(cars):
            if flags[i] != prev_flags.get(i):
                log.emit(t, i, "flag", {
                    "color": flags[i].color.name.lower(),
                    "limit": (None if math.isinf(flags[i].velocity_limit)
                              else flags[i].velocity_limit)})
                prev_flags[i] = flags[i]
            run.flag = flags[i]

        for i, run in enumerate(cars):
            opp = cars[1 - i]
            sep = _wrap_signed(opp.arc - run.arc, total)
            if run.is_argos:
                word = run.estimator.observe(
                    t, sep, opp.lat, leaders[1 - i], leaders[i],
                    my_side=run.pass_side)
                if word == OPP_ABANDONED:
                    # a lane change across the centre reads as convergence
                    # for under a second; only a persistent surrender may
                    # reach the automaton, or the defender quits early
                    if run.abandoned_since is None:
                        run.abandoned_since = t
                    if t - run.abandoned_since < ABANDON_CONFIRM:
                        word = 0
                else:
                    run.abandoned_since = None
                run.word = word
                if run.word == OPP_ATTEMPTING:
                    run.attempt_seen_t = t
            else:
                run.word = 0

        in_zone = {i: in_passing_zone(zones, cars[i].arc) for i in (0, 1)}
        boost_requests = {}
        for i, run in enumerate(cars):
            opp = cars[1 - i]
            sep = _wrap_signed(opp.arc - run.arc, total)
            req = False
            if run.is_argos and run.reservoir.budget > 0.0:
                # a pass keeps requesting even as the car drops out of the
                # zone; race control denies that request instead of granting
                if run.network.states.autopass is AutoPassState.PASS:
                    req = True
                elif (in_zone[i] and not leaders[i]
                      and run.cfg.triggers.follow_max + 2.0 < sep
                      <= run.cfg.triggers.tracking_range
                      and run.reservoir.budget
                      > run.cfg.triggers.boost_launch_floor + CLOSING_RESERVE):
                    req = True
            boost_requests[i] = req
        world = WorldView(t=t,
                          vehicle_states={i: cars[i].state for i in (0, 1)},
                          progress=progress, leaders=leaders, in_zone=in_zone,
                          boost_requests=boost_requests)
        tick_violations, forced = enforce_rules(world, scenario.rules, ledger,
                                               cars[0].cfg.vehicle)
        for v in tick_violations:
            violations.append(v)
            log.emit(t, v.car_id, "violation",
                     {"rule": v.rule, "detail": v.detail})
        force_abandon = {0: False, 1: False}
        force_fallback = {0: False, 1: False}
        denied = {0: False, 1: False}
        for ev in forced:
            if ev.kind == "force_abandon":
                force_abandon[ev.car_id] = True
            elif ev.kind == "force_fallback":
                force_fallback[ev.car_id] = True
            elif ev.kind == "deny_boost":
                denied[ev.car_id] = True
                denials += 1
                log.emit(t, ev.car_id, "violation",
                         {"rule": "R4",
                          "detail": "boost request denied outside zone"})

        solve_tick = tick % solve_every == 0

        # --- per-car phase: automata, planning, control, dynamics ----------
        for i, run in enumerate(cars):
            opp = cars[1 - i]
            sep = _wrap_signed(opp.arc - run.arc, total)
            trig = run.cfg.triggers
            closing_boost = False

            if run.is_argos:
                net = run.network
                # viability sidebands, computed only near the arming window.
                # The pass plan cache warms regardless of the flag so a
                # launch can fire on the very first blue tick of a zone.
                candidate = (net.states.argos in (ArgosState.RACE,
                                                  ArgosState.WAIT)
                             and abs(sep) <= trig.follow_max + 5.0
                             and _near_zone(zones, run.arc, total, 120.0))
                ot_viable = df_viable = False
                if candidate and not leaders[i]:
                    if solve_tick:
                        try:
                            run.launch_plan = build_pass_plan(run, opp, sep,
                                                              trig)
                            run.launch_plan_tick = tick
                        except InfeasiblePlanError:
                            run.launch_plan = None
                    ot_viable = (overtake_viable(run, opp, trig, black_pending)
                                 and run.launch_plan is not None
                                 and tick - run.launch_plan_tick
                                 <= 2 * solve_every)
                elif candidate:
                    df_viable = defense_viable(run, t, black_pending)
                if not candidate and not _maneuvering(net.states):
                    run.pass_side = 0
                    run.rerouted = False

                frame = InputFrame(
                    flag=run.flag,
                    active_reference=(ReferenceTag.OVERRIDE if run.active_plan
                                      is not None else ReferenceTag.RACELINE),
                    separation=sep,
                    is_leader=leaders[i],
                    boost_budget=run.reservoir.budget,
                    opponent_word=run.word)
                aux = AuxInputs(
                    overtake_plan_viable=ot_viable,
                    defense_plan_viable=df_viable,
                    force_abandon=force_abandon[i],
                    force_fallback=force_fallback[i],
                    pass_payload=("pass", "pass"),
                    abandon_payload=("abandon", "abandon"),
                    defense_payload=("block", "block"),
                    fallback_payload=("fallback", "fallback"))
                res = net.step(t, frame, aux)
                if res.fsc is FscTag.INVALID:
                    raise FrameworkInvariantError(
                        f"invalid state combination for car {i} at t={t:.2f}")
                events.append(TraceEvent(t=round(t, 6), car_id=i,
                                         fsc=res.fsc.value))
                plan_dirty = False
                for tr in res.transitions:
                    log.emit(t, i, "transition", {
                        "automaton": tr.automaton, "from": tr.from_state,
                        "to": tr.to_state, "guard": tr.guard_id, "fsc": tr.fsc})
                    gid = tr.guard_id
                    if gid == "ap2":
                        ledger.note_launch(i, "pass",
                                           run.progress.cumulative_distance)
                        run.active_plan = run.launch_plan
                        plan_dirty = run.active_plan is None
                    elif gid == "ka2":
                        ledger.note_launch(i, "block",
                                           run.progress.cumulative_distance)
                        plan_dirty = True
                    elif gid in ("ap4", "ka4"):
                        plan_dirty = True
                    elif gid in ("ap5", "ap6", "ap8", "ap9",
                                 "ka3", "ka5", "ka7", "ka9"):
                        ledger.note_exit(i)
                        run.clear_episode()

                states = net.states
                # an opportunity is the first waiting tick inside a zone
                if states.argos is ArgosState.WAIT and not states.wait_unwind:
                    if (run.flag.color is FlagColor.BLUE
                            and not run.wait_counted):
                        run.opportunities[1 if leaders[i] else 0] += 1
                        run.wait_counted = True
                else:
                    run.wait_counted = False

                # blocked on the committed side: swap lanes once, early enough
                if (states.autopass is AutoPassState.PASS
                        and run.word == OPP_BLOCKING and not run.rerouted
                        and sep >= REROUTE_MIN_SEP):
                    run.pass_side = -run.pass_side
                    run.rerouted = True
                    plan_dirty = True

                # refresh the active override plan from live poses
                if res.op0 and (solve_tick or plan_dirty
                                or run.active_plan is None):
                    try:
                        if states.autopass is AutoPassState.PASS:
                            run.active_plan = build_pass_plan(run, opp, sep,
                                                              trig)
                        elif states.autopass is AutoPassState.ABANDON:
                            run.active_plan = build_abandon_plan(run, opp, sep,
                                                                trig)
                        elif states.kaval is KavalState.BLOCK:
                            run.active_plan = build_block_plan(run, opp, trig)
                        elif states.kaval is KavalState.FALLBACK:
                            run.active_plan = build_fallback_plan(run, opp,
                                                                 sep, trig)
                    except InfeasiblePlanError:
                        pass            # keep the previous sample briefly
                if not res.op0:
                    run.active_plan = None
                if res.op0 != prev_op0[i]:
                    log.emit(t, i, "override", {"op0": res.op0})
                    prev_op0[i] = res.op0
                    plan_dirty = True
                op0 = res.op0
                closing_boost = (boost_requests[i] and not denied[i]
                                 and op0 == 0 and in_zone[i])
            else:
                op0 = 0
                plan_dirty = False

            # boost accounting (a denied request never drains)
            granted = boost_requests[i] and in_zone[i] and not denied[i]
            drain_on = granted and run.reservoir.budget > 0.0
            if drain_on != run.reservoir.drain_active:
                run.reservoir = AemsReservoir(run.reservoir.budget,
                                              run.reservoir.per_lap_grant,
                                              drain_on)
            before = run.reservoir.budget
            run.reservoir = aems_drain(run.reservoir, dt)
            run.boost_used += before - run.reservoir.budget

            # path tracking at its own cadence
            trajectory = (run.active_plan
                          if op0 and run.active_plan is not None else raceline)
            if solve_tick or plan_dirty:
                run.held = clamp_command(
                    run.tracker.command(run.state, trajectory),
                    run.cfg.vehicle)
            cmd = run.held

            cap = speed_limit(run.cfg.vehicle, run.reservoir,
                              run.flag.velocity_limit)
            pushing = closing_boost or (
                run.is_argos
                and run.network.states.autopass is AutoPassState.PASS)
            if run.is_argos and not leaders[i] and op0 == 0:
                if not closing_boost and 0.0 < sep <= trig.follow_max + 2.0:
                    # station in the lower half of the window: profile ramps
                    # open the gap from above, so keep some drift margin
                    aim = (trig.follow_min + trig.follow_max) / 2.0 - 1.0
                    cap = min(cap, max(opp.state.v
                                       + FOLLOW_GAIN * (sep - aim), 5.0))
                    # profile tracking alone parks the gap wherever the last
                    # excursion left it, so the governor throttles as well
                    # as caps whenever the station is long
                    if sep > aim + 0.5:
                        pushing = True
            if pushing and run.state.v < cap - 0.5:
                # the tracker eases toward a far-off speed reference; a pass
                # or a catch-up needs the full accelerator against the cap
                cmd = Command(a=run.cfg.vehicle.a_max, delta=cmd.delta)
            run.state = vehicle_step(run.state, cmd, dt, run.cfg.vehicle,
                                     v_cap=cap)

        # --- post-step phase: projection, laps, odometry -------------------
        for i, run in enumerate(cars):
            run.project()
            run.progress.advance(run.arc, total)
            if run.progress.laps > run.laps_seen:
                run.laps_seen = run.progress.laps
                run.lap_times.append(round(t + dt - run.lap_start_t, 6))
                run.lap_start_t = t + dt
                run.reservoir = aems_lap_reset(run.reservoir)
                log.emit(t + dt, i, "lap", {"lap": run.laps_seen,
                                            "lap_time": run.lap_times[-1]})
            if odo_fh is not None and solve_tick:
                fsc = fsc_of(run.network.states).value if run.network else ""
                odo_fh.write(
                    f"{round(t, 6)},{i},{run.state.x:.3f},{run.state.y:.3f},"
                    f"{run.state.phi:.4f},{run.state.v:.3f},{run.arc:.3f},"
                    f"{run.lat:.3f},{run.reservoir.budget:.3f},{fsc}\n")

        tick += 1
        if black_issued:
            break                       # the black tick has been processed

    opportunities = {i: tuple(cars[i].opportunities) for i in (0, 1)}
    both_argos = all(c.is_argos for c in cars)
    verdict, counters, traces = verify_race(events, opportunities,
                                            cross_check_enabled=both_argos)
    standings = sorted(
        (0, 1), key=lambda i: (cars[i].progress.laps, cars[i].progress.arc_s),
        reverse=True)
    return SimResult(
        verdict=verdict, counters=counters, traces=traces, events=events,
        log_rows=log.rows,
        lap_times={i: cars[i].lap_times for i in (0, 1)},
        violations=violations, denials=denials,
        boost_used={i: round(cars[i].boost_used, 6) for i in (0, 1)},
        final_progress={i: (cars[i].progress.laps,
                            round(cars[i].progress.arc_s, 3))
                        for i in (0, 1)},
        winner=standings[0], ticks=tick, race_time=round(tick * dt, 6))


def summarize(scenario: ScenarioConfig, result: SimResult) -> dict:
    return {
        "seed": scenario.seed,
        "laps": scenario.laps,
        "race_time": result.race_time,
        "winner": result.winner,
        "final_progress": {str(k): list(v)
                           for k, v in result.final_progress.items()},
        "lap_times": {str(k): v for k, v in result.lap_times.items()},
        "counters": {str(k): c.to_dict() for k, c in result.counters.items()},
        "verdict": result.verdict.to_dict(),
        "violations": [{"t": v.t, "car": v.car_id, "rule": v.rule,
                        "detail": v.detail} for v in result.violations],
        "boost_denials": result.denials,
        "boost_used": {str(k): v for k, v in result.boost_used.items()},
    }


def run_race(scenario: ScenarioConfig, out_dir) -> RunArtifacts:
    """Simulate one race and write its three artifacts into out_dir."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "event_log.jsonl")
    odo_path = os.path.join(out_dir, "odometry.csv")
    summary_path = os.path.join(out_dir, "summary.json")
    with open(log_path, "w", encoding="utf-8") as log_fh, \
            open(odo_path, "w", encoding="utf-8") as odo_fh:
        result = simulate(scenario, log_fh=log_fh, odo_fh=odo_fh)
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summarize(scenario, result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunArtifacts(event_log=log_path, odometry=odo_path,
                        summary=summary_path)


# --- sweeps ----------------------------------------------------------------

def run_sweep(sweep: SweepConfig, csv_fh=None) -> list:
    """Race the axis grid; aggregate per-value success probabilities.

    Returns rows of (value, p_overtake, p_defense, n). Seeds are derived
    per (value index, repeat) so execution order cannot matter.
    """
    rows = []
    front, back = sweep.base.starting_order
    for vi, value in enumerate(sweep.values):
        ot_hits = 0
        df_hits = 0
        n = sweep.seeds_per_value
        for k in range(n):
            seed = sweep.base.seed + 10007 * vi + k
            scenario = sweep.scenario_for(value, seed)
            result = simulate(scenario)
            counters = result.counters
            if counters.get(back) and counters[back].overtake_successes > 0:
                ot_hits += 1
            if counters.get(front) and counters[front].defense_successes > 0:
                df_hits += 1
        rows.append((value, ot_hits / n, df_hits / n, n))
    if csv_fh is not None:
        csv_fh.write("value,p_overtake,p_defense,n\n")
        for value, p_ot, p_df, n in rows:
            csv_fh.write(f"{value},{p_ot:.4f},{p_df:.4f},{n}\n")
    return rows


# --- log re-verification ---------------------------------------------------

class LogParseError(Exception):
    pass


def read_transition_stream(path) -> list:
    """Per-car tag stream from a JSONL event log.

    A truncated final line (interrupted write) is tolerated; malformed
    interior lines are not.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise LogParseError(f"cannot read log: {e}") from None
    events = []
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if row["kind"] == "transition":
                events.append(TraceEvent(t=float(row["t"]),
                                         car_id=int(row["car"]),
                                         fsc=str(row["payload"]["fsc"])))
        except (ValueError, KeyError, TypeError) as e:
            if n == len(lines) - 1:
                break                   # torn tail from a killed process
            raise LogParseError(f"line {n + 1}: {e}") from None
    return events


def verify_log(path):
    """(verdict, exit_code): 0 pass, 1 verification failure, 2 unparseable."""
    try:
        events = read_transition_stream(path)
    except LogParseError:
        return None, 2
    verdict, _, _ = verify_race(events)
    return verdict, 0 if verdict.passed else 1


# --- reporting -------------------------------------------------------------

def report_text(summary: dict) -> str:
    out = [f"race: {summary['laps']} laps, seed {summary['seed']}, "
           f"{summary['race_time']:.1f}s, winner car {summary['winner']}"]
    for car, c in sorted(summary["counters"].items()):
        out.append(
            f"car {car}: overtakes {c['overtake_attempts']} attempted "
            f"({c['overtake_opportunities']} opportunities) = "
            f"{c['overtake_successes']} ok + {c['overtake_abandons']} abandoned "
            f"+ {c['overtake_dnf']} unfinished; defenses "
            f"{c['defense_attempts']} attempted "
            f"({c['defense_opportunities']} opportunities) = "
            f"{c['defense_successes']} ok + {c['defense_failures']} failed "
            f"+ {c['defense_dnf']} unfinished")
    for car, times in sorted(summary["lap_times"].items()):
        shown = ", ".join(f"{x:.2f}" for x in times)
        out.append(f"car {car} lap times: {shown}")
    for car, used in sorted(summary["boost_used"].items()):
        out.append(f"car {car} boost used: {used:.1f}s")
    by_rule = {}
    for v in summary["violations"]:
        by_rule[v["rule"]] = by_rule.get(v["rule"], 0) + 1
    out.append("violations: " + (", ".join(
        f"{r}x{n}" for r, n in sorted(by_rule.items())) or "none"))
    verdict = summary["verdict"]
    cross = verdict.get("cross_check_ok")
    out.append(f"verdict: {'PASS' if verdict['passed'] else 'FAIL'}"
               f" (cross-check: "
               f"{'skipped' if cross is None else 'ok' if cross else 'FAILED'})")
    return "\n".join(out)
