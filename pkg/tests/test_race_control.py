"""Race control: flags, leadership, intent estimation, rule enforcement."""

import math

import pytest

from argosim.automata import FlagColor
from argosim.race_control import (
    EstimatorConfig,
    ForcedEvent,
    ManeuverLedger,
    OpponentEstimator,
    RaceProgress,
    RuleBook,
    Violation,
    WorldView,
    enforce_rules,
    footprint_clearance,
    leader_flag,
    update_flag,
)
from argosim.track import PassingZone
from argosim.vehicle import VehicleParams, VehicleState

PARAMS = VehicleParams()
RULES = RuleBook()
ZONES = (PassingZone(0.0, 400.0), PassingZone(1200.0, 1600.0))


def prog(laps=0, arc=0.0, cum=None):
    return RaceProgress(laps=laps, arc_s=arc,
                        cumulative_distance=cum if cum is not None else arc)


class TestRaceProgress:
    def test_advance_accumulates_forward_motion(self):
        p = RaceProgress()
        p.advance(1.4, 2400.0)
        p.advance(2.9, 2400.0)
        assert p.laps == 0
        assert math.isclose(p.arc_s, 2.9)
        assert math.isclose(p.cumulative_distance, 2.9)

    def test_lap_counted_at_start_line_crossing(self):
        p = RaceProgress(laps=0, arc_s=2398.5, cumulative_distance=2398.5)
        p.advance(1.5, 2400.0)
        assert p.laps == 1
        assert math.isclose(p.cumulative_distance, 2401.5)

    def test_cumulative_never_decreases(self):
        p = RaceProgress(arc_s=100.0, cumulative_distance=100.0)
        p.advance(99.9, 2400.0)   # tiny projection jitter
        assert p.cumulative_distance == 100.0
        assert p.arc_s == 99.9


class TestRuleBook:
    def test_defaults(self):
        r = RuleBook()
        assert r.observation_radius_attacker == 150.0
        assert r.observation_radius_defender == 100.0
        assert r.max_block_attempts == 2
        assert r.safety_distance == 7.5
        assert r.fatigue_distance_attacker == 1200.0
        assert r.fatigue_distance_defender == 400.0

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            RuleBook(safety_distance=0.0)

    def test_attacker_radius_must_exceed_defenders(self):
        with pytest.raises(ValueError):
            RuleBook(observation_radius_attacker=90.0)


class TestUpdateFlag:
    def test_blue_inside_zone_green_outside(self):
        flags = update_flag({0: prog(arc=50.0), 1: prog(arc=800.0)}, ZONES, 5)
        assert flags[0].color is FlagColor.BLUE
        assert flags[1].color is FlagColor.GREEN

    def test_zone_end_is_exclusive(self):
        flags = update_flag({0: prog(arc=400.0), 1: prog(arc=399.9)}, ZONES, 5)
        assert flags[0].color is FlagColor.GREEN
        assert flags[1].color is FlagColor.BLUE

    def test_black_for_both_when_either_finishes(self):
        flags = update_flag({0: prog(laps=5, arc=10.0), 1: prog(laps=4, arc=2000.0)},
                            ZONES, 5)
        assert all(f.color is FlagColor.BLACK for f in flags.values())


class TestLeaderFlag:
    def test_lap_advantage_wins(self):
        lead = leader_flag({0: prog(laps=2, arc=10.0), 1: prog(laps=1, arc=2000.0)},
                           {0: False, 1: True})
        assert lead == {0: True, 1: False}

    def test_arc_breaks_same_lap(self):
        lead = leader_flag({0: prog(laps=1, arc=500.0), 1: prog(laps=1, arc=510.0)},
                           {0: True, 1: False})
        assert lead == {0: False, 1: True}

    def test_exact_tie_keeps_previous_holder(self):
        tied = {0: prog(laps=1, arc=500.0), 1: prog(laps=1, arc=500.0)}
        assert leader_flag(tied, {0: True, 1: False}) == {0: True, 1: False}
        assert leader_flag(tied, {0: False, 1: True}) == {0: False, 1: True}

    def test_exactly_one_leader(self):
        lead = leader_flag({0: prog(arc=5.0), 1: prog(arc=7.0)}, {0: True, 1: False})
        assert sum(lead.values()) == 1


class TestOpponentEstimator:
    def test_offset_and_closing_reads_as_attempt(self):
        # leader on the raceline watching a follower 5 m off line closing at 3 m/s
        est = OpponentEstimator()
        assert est.observe(0.0, -30.0, 5.0, False, True) == 0   # one sample only
        word = est.observe(0.5, -28.5, 5.0, False, True)
        assert word == 1

    def test_attempt_then_convergence_reads_as_abandoned(self):
        est = OpponentEstimator()
        est.observe(0.0, -30.0, 5.0, False, True)
        assert est.observe(0.5, -28.5, 5.0, False, True) == 1
        assert est.observe(1.0, -28.0, 4.2, False, True) == 2
        assert est.observe(1.5, -28.0, 3.4, False, True) == 2

    def test_recentered_opponent_clears_memory(self):
        est = OpponentEstimator()
        est.observe(0.0, -30.0, 5.0, False, True)
        est.observe(0.5, -28.5, 5.0, False, True)
        est.observe(1.0, -28.0, 0.5, False, True)
        assert est.observe(1.5, -28.0, 0.2, False, True) == 0

    def test_beyond_observation_radius_zero_and_history_dropped(self):
        est = OpponentEstimator()
        est.observe(0.0, -30.0, 5.0, False, True)
        # defender radius is 100 m
        assert est.observe(0.5, -120.0, 5.0, False, True) == 0
        # back in range: history restarts, single sample, still zero
        assert est.observe(1.0, -30.0, 5.0, False, True) == 0

    def test_attacker_radius_is_wider(self):
        est = OpponentEstimator()
        est.observe(0.0, 120.0, 0.0, True, False)
        assert len(est._history) == 1   # 120 m within the attacker's 150 m

    def test_stationary_colinear_cars_read_zero(self):
        est = OpponentEstimator()
        est.observe(0.0, -30.0, 0.0, False, True)
        assert est.observe(0.5, -30.0, 0.0, False, True) == 0

    def test_leader_holding_offset_on_my_side_reads_as_blocking(self):
        est = OpponentEstimator()
        est.observe(0.0, 27.0, 3.0, True, False, my_side=1)
        assert est.observe(0.5, 27.0, 3.0, True, False, my_side=1) == 4

    def test_offset_on_other_side_is_not_blocking(self):
        est = OpponentEstimator()
        est.observe(0.0, 27.0, 3.0, True, False, my_side=-1)
        assert est.observe(0.5, 27.0, 3.0, True, False, my_side=-1) == 0

    def test_blocker_yielding_reads_as_fallback(self):
        est = OpponentEstimator()
        est.observe(0.0, 27.0, 3.0, True, False, my_side=1)
        assert est.observe(0.5, 27.0, 3.0, True, False, my_side=1) == 4
        assert est.observe(1.0, 27.0, 2.4, True, False, my_side=1) == 8
        # losing the lead while remembered as blocking also reads as yielding
        est2 = OpponentEstimator()
        est2.observe(0.0, 27.0, 3.0, True, False, my_side=1)
        est2.observe(0.5, 27.0, 3.0, True, False, my_side=1)
        assert est2.observe(1.0, 10.0, 3.0, False, False, my_side=1) == 8

    def test_word_always_one_hot(self):
        est = OpponentEstimator()
        script = [(-30.0, 5.0, False), (-28.0, 4.0, False), (27.0, 3.0, True),
                  (27.0, 2.0, True), (-10.0, 0.2, False), (160.0, 0.0, True)]
        for i, (sep, lat, lead) in enumerate(script):
            word = est.observe(0.5 * i, sep, lat, lead, False, my_side=1)
            assert word in (0, 1, 2, 4, 8)


class TestFootprintClearance:
    def test_overlapping_cars_zero(self):
        a = VehicleState(0.0, 0.0, 0.0, 0.0)
        b = VehicleState(1.0, 0.5, 0.3, 0.0)
        assert footprint_clearance(a, b, PARAMS) == 0.0

    def test_axis_aligned_gap(self):
        # nose-to-tail: centers 10 m apart, each box 4.9 m long
        a = VehicleState(0.0, 0.0, 0.0, 0.0)
        b = VehicleState(10.0, 0.0, 0.0, 0.0)
        assert math.isclose(footprint_clearance(a, b, PARAMS), 10.0 - 4.9, abs_tol=1e-9)

    def test_perpendicular_neighbor(self):
        # second car rotated a quarter turn: half length becomes half width
        a = VehicleState(0.0, 0.0, 0.0, 0.0)
        b = VehicleState(10.0, 0.0, math.pi / 2, 0.0)
        expected = 10.0 - 0.5 * PARAMS.car_length - 0.5 * PARAMS.car_width
        assert math.isclose(footprint_clearance(a, b, PARAMS), expected, abs_tol=1e-9)

    def test_diagonal_corner_to_corner(self):
        a = VehicleState(0.0, 0.0, 0.0, 0.0)
        b = VehicleState(5.0, 5.0, 0.0, 0.0)
        expected = math.hypot(5.0 - 4.9, 5.0 - 1.9)
        assert math.isclose(footprint_clearance(a, b, PARAMS), expected, abs_tol=1e-9)

    def test_symmetric(self):
        a = VehicleState(3.0, -2.0, 0.4, 0.0)
        b = VehicleState(12.0, 4.0, -0.9, 0.0)
        assert math.isclose(footprint_clearance(a, b, PARAMS),
                            footprint_clearance(b, a, PARAMS), abs_tol=1e-12)


def world(t=0.0, gap=50.0, leaders=None, cum=(0.0, 0.0), in_zone=True,
          boost=None):
    return WorldView(
        t=t,
        vehicle_states={0: VehicleState(0.0, 0.0, 0.0, 40.0),
                        1: VehicleState(gap, 0.0, 0.0, 40.0)},
        progress={0: prog(arc=0.0, cum=cum[0]), 1: prog(arc=gap, cum=cum[1])},
        leaders=leaders or {0: False, 1: True},
        in_zone={0: in_zone, 1: in_zone},
        boost_requests=boost or {},
    )


class TestManeuverLedger:
    def test_block_attempts_reset_when_overtake_episode_ends(self):
        led = ManeuverLedger()
        led.note_launch(0, "pass", 100.0)
        led.note_launch(1, "block", 110.0)
        led.note_exit(1)
        led.note_launch(1, "block", 150.0)
        assert led.block_attempts[1] == 2
        led.note_exit(1)
        led.note_exit(0)   # attacker's episode over
        assert led.block_attempts[1] == 0


class TestEnforceRules:
    def test_attacker_fatigue_forces_abandon_once(self):
        led = ManeuverLedger()
        led.note_launch(0, "pass", 0.0)
        w = world(t=10.0, cum=(1250.0, 1250.0))
        violations, forced = enforce_rules(w, RULES, led, PARAMS)
        assert [v.rule for v in violations] == ["R5"]
        assert violations[0].car_id == 0
        assert any(f.kind == "force_abandon" and f.car_id == 0 for f in forced)
        # repeat tick: still forced, not re-logged
        violations, forced = enforce_rules(w, RULES, led, PARAMS)
        assert violations == []
        assert any(f.kind == "force_abandon" for f in forced)

    def test_defender_fatigue_is_tighter(self):
        led = ManeuverLedger()
        led.note_launch(1, "block", 0.0)
        w = world(t=5.0, cum=(450.0, 450.0))
        violations, forced = enforce_rules(w, RULES, led, PARAMS)
        assert [v.rule for v in violations] == ["R5"]
        assert any(f.kind == "force_fallback" and f.car_id == 1 for f in forced)

    def test_third_block_attempt_forces_fallback(self):
        led = ManeuverLedger()
        led.note_launch(0, "pass", 0.0)
        for _ in range(3):
            led.note_launch(1, "block", 0.0)
            led.note_exit(1)
        led.note_launch(1, "block", 0.0)   # 4th initiation, over the limit of 2
        w = world()
        violations, forced = enforce_rules(w, RULES, led, PARAMS)
        assert [v.rule for v in violations] == ["R2"]
        assert any(f.kind == "force_fallback" and f.car_id == 1 for f in forced)
        violations, _ = enforce_rules(w, RULES, led, PARAMS)
        assert violations == []

    def test_two_block_attempts_are_legal(self):
        led = ManeuverLedger()
        led.note_launch(0, "pass", 0.0)
        led.note_launch(1, "block", 0.0)
        led.note_exit(1)
        led.note_launch(1, "block", 0.0)
        violations, forced = enforce_rules(world(), RULES, led, PARAMS)
        assert violations == [] and forced == []

    def test_proximity_violation_charged_to_attacker(self):
        led = ManeuverLedger()
        w = world(gap=6.0, leaders={0: False, 1: True})
        violations, _ = enforce_rules(w, RULES, led, PARAMS)
        assert [v.rule for v in violations] == ["R3"]
        assert violations[0].car_id == 0

    def test_sustained_proximity_counts_once(self):
        led = ManeuverLedger()
        close = world(gap=6.0)
        far = world(gap=30.0)
        v1, _ = enforce_rules(close, RULES, led, PARAMS)
        v2, _ = enforce_rules(world(gap=6.5), RULES, led, PARAMS)
        assert len(v1) == 1 and v2 == []
        enforce_rules(far, RULES, led, PARAMS)   # breach episode closes
        v3, _ = enforce_rules(close, RULES, led, PARAMS)
        assert len(v3) == 1

    def test_safe_gap_no_violation(self):
        violations, forced = enforce_rules(world(gap=13.0), RULES, ManeuverLedger(),
                                           PARAMS)
        assert violations == [] and forced == []

    def test_boost_denied_outside_zone(self):
        w = world(in_zone=False, boost={0: True, 1: False})
        _, forced = enforce_rules(w, RULES, ManeuverLedger(), PARAMS)
        assert forced == [ForcedEvent(w.t, 0, "deny_boost")]

    def test_boost_allowed_inside_zone(self):
        w = world(in_zone=True, boost={0: True})
        _, forced = enforce_rules(w, RULES, ManeuverLedger(), PARAMS)
        assert forced == []
