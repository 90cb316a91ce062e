"""Supervisory automaton network for head-to-head racing.

Three interlocking state machines per car: a supervisor that decides when to
race, wait, overtake or defend; an overtake automaton (disarm/init/pass/
abandon/exit); and a defense automaton (disarm/init/block/fallback/exit).
They communicate over a small signal bus and multiplex the planner override
payloads onto the tracker reference outputs.

Every network tick maps the state triple to a tagged combination (fsc00 ..
fsc41); the tag stream is the contract checked by the trace verifier. The
update order within one tick is fixed: supervisor, overtake automaton,
defense automaton, output word, output mux. A signal written this tick is
visible downstream in the same tick and upstream on the next one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum


class FrameworkInvariantError(Exception):
    """An internal wiring rule was broken; the run should halt with a dump."""


class FlagColor(Enum):
    GREEN = "green"
    BLUE = "blue"
    BLACK = "black"


@dataclass(frozen=True)
class RaceFlag:
    """Race-control flag plus the speed ceiling it carries."""
    color: FlagColor
    velocity_limit: float = math.inf

    def __post_init__(self):
        if self.velocity_limit <= 0:
            raise ValueError("flag velocity limit must be positive")


GREEN_FLAG = RaceFlag(FlagColor.GREEN)
BLUE_FLAG = RaceFlag(FlagColor.BLUE)
BLACK_FLAG = RaceFlag(FlagColor.BLACK)


class ReferenceTag(Enum):
    """Which trajectory the tracker is currently fed."""
    RACELINE = "raceline"
    OVERRIDE = "override"


class ArgosState(Enum):
    STANDBY = "standby"
    RACE = "race"
    WAIT = "wait"
    OVERTAKE = "overtake"
    DEFEND = "defend"


class AutoPassState(Enum):
    DISARM = "disarm"
    INIT = "init"
    PASS = "pass"
    ABANDON = "abandon"
    EXIT = "exit"


class KavalState(Enum):
    DISARM = "disarm"
    INIT = "init"
    BLOCK = "block"
    FALLBACK = "fallback"
    EXIT = "exit"


class FscTag(Enum):
    FSC00 = "fsc00"
    FSC10 = "fsc10"
    FSC20 = "fsc20"
    FSC21 = "fsc21"
    FSC30 = "fsc30"
    FSC31 = "fsc31"
    FSC40 = "fsc40"
    FSC41 = "fsc41"
    INVALID = "invalid"


VALID_FSC = frozenset(t for t in FscTag if t is not FscTag.INVALID)

# opponent-intent word bits (decimal value of the set bit)
OPP_ATTEMPTING = 1      # offset from the raceline, behind, and closing
OPP_ABANDONED = 2       # was attempting, now converging back while behind
OPP_BLOCKING = 4        # leader moving over to shut the passing lane
OPP_FALLBACK = 8        # was blocking, now yielding

IP5_LEGAL = frozenset((0, OPP_ATTEMPTING, OPP_ABANDONED, OPP_BLOCKING, OPP_FALLBACK))
OP0_LEGAL = frozenset((0, 1, 2, 3, 4, 8, 12))


def has_bit(word: int, bit: int) -> bool:
    return bool(word & bit)


@dataclass(frozen=True)
class TriggerSet:
    """Hard numeric thresholds gating the automaton transitions.

    Distances in meters, the two boost thresholds in seconds.
    """
    tracking_range: float = 150.0       # opponent ignored beyond this
    follow_min: float = 25.0            # near edge of the follow window
    follow_max: float = 30.0            # far edge of the follow window
    launch_min: float = 25.0            # closest separation that may start a maneuver
    complete_lead: float = 20.0         # lead that completes an overtake
    recover_gap: float = 20.0           # minimum gap behind after a failed maneuver
    boost_launch_floor: float = 6.0     # [s] budget required to start a pass
    boost_abort_floor: float = 1.5      # [s] budget under which a pass aborts
    safety_clearance: float = 7.5       # minimum inter-car clearance

    def __post_init__(self):
        if not self.follow_min < self.follow_max:
            raise ValueError("follow window must have follow_min < follow_max")
        if self.complete_lead <= 0 or self.recover_gap <= 0:
            raise ValueError("completion distances must be positive")
        if not self.boost_abort_floor < self.boost_launch_floor:
            raise ValueError("boost floors must satisfy abort < launch")
        if not self.tracking_range > self.follow_max:
            raise ValueError("tracking range must exceed the follow window")

    # short historical aliases, kept so configs can address fields either way
    trig0 = property(lambda self: self.tracking_range)
    trig1 = property(lambda self: self.follow_min)
    trig2 = property(lambda self: self.follow_max)
    trig3 = property(lambda self: self.launch_min)
    trig4 = property(lambda self: self.complete_lead)
    trig5 = property(lambda self: self.recover_gap)
    trig6 = property(lambda self: self.boost_launch_floor)
    trig7 = property(lambda self: self.boost_abort_floor)
    trig8 = property(lambda self: self.safety_clearance)

    ALIASES = {f"trig{i}": name for i, name in enumerate((
        "tracking_range", "follow_min", "follow_max", "launch_min",
        "complete_lead", "recover_gap", "boost_launch_floor",
        "boost_abort_floor", "safety_clearance"))}


@dataclass
class SignalBus:
    """Internal wires between the three automatons.

    Boolean wires: arm and launch per maneuver plus a completion wire the
    maneuver automaton raises on exit. Payload wires carry the planner
    override references (speed profile, path) or None when inactive. The
    global references are the raceline pair the mux falls back to.
    """
    global_speed_ref: object = None
    global_path_ref: object = None

    arm_pass: bool = False              # supervisor arms the overtake automaton
    launch_pass: bool = False           # supervisor hands over control
    done_pass: bool = False             # overtake automaton reports completion
    pass_speed_ref: object = None
    pass_path_ref: object = None

    arm_block: bool = False
    launch_block: bool = False
    done_block: bool = False
    block_speed_ref: object = None
    block_path_ref: object = None

    # a completion caused by losing the passing zone; the supervisor skips
    # the wait unwind and the trace shows the direct-return dnf signature
    cut_pending: bool = False

    def clear_pass_signals(self) -> None:
        self.arm_pass = False
        self.launch_pass = False
        self.done_pass = False
        self.pass_speed_ref = None
        self.pass_path_ref = None

    def clear_block_signals(self) -> None:
        self.arm_block = False
        self.launch_block = False
        self.done_block = False
        self.block_speed_ref = None
        self.block_path_ref = None

    def reset(self) -> None:
        """Full wipe except the global references."""
        self.clear_pass_signals()
        self.clear_block_signals()
        self.cut_pending = False

    def validate(self) -> None:
        if self.launch_pass and not self.arm_pass:
            raise FrameworkInvariantError("launch_pass raised without arm_pass")
        if self.launch_block and not self.arm_block:
            raise FrameworkInvariantError("launch_block raised without arm_block")
        pass_payload = self.pass_speed_ref is not None or self.pass_path_ref is not None
        block_payload = self.block_speed_ref is not None or self.block_path_ref is not None
        if pass_payload and block_payload:
            raise FrameworkInvariantError(
                "overtake and defense payloads published simultaneously")


@dataclass(frozen=True)
class InputFrame:
    """Per-tick inputs to one car's network.

    separation is the signed arc distance to the opponent along the raceline,
    positive when the opponent is ahead. boost_budget is the remaining boost
    reservoir in seconds. opponent_word is the estimated opponent intent,
    one-hot or zero.
    """
    flag: RaceFlag
    active_reference: ReferenceTag = ReferenceTag.RACELINE
    separation: float = 0.0
    is_leader: bool = False
    boost_budget: float = 0.0
    opponent_word: int = 0

    def __post_init__(self):
        if self.boost_budget < 0:
            raise ValueError("boost budget cannot be negative")
        if self.opponent_word not in IP5_LEGAL:
            raise ValueError("opponent word must be one-hot (0, 1, 2, 4 or 8)")


@dataclass(frozen=True)
class AuxInputs:
    """Sideband inputs from the harness: plan handles and rule enforcement.

    Payloads are (speed_ref, path_ref) pairs published while the owning state
    is active; None publishes nothing. Force flags drive the normal abandon
    and fallback guards so rule enforcement never mutates states directly.
    """
    overtake_plan_viable: bool = True
    defense_plan_viable: bool = True
    force_abandon: bool = False
    force_fallback: bool = False
    pass_payload: tuple | None = None
    abandon_payload: tuple | None = None
    defense_payload: tuple | None = None
    fallback_payload: tuple | None = None


_DEFAULT_AUX = AuxInputs()


@dataclass(frozen=True)
class AutomatonStates:
    """The state triple plus the transient bookkeeping it needs.

    The exited_from fields remember which state an Exit left, so the tag
    stream shows the maneuver tag for the exit tick instead of a distinct
    exit tag. wait_unwind marks the one-tick Wait visit on the way back to
    Race after a completed maneuver.
    """
    argos: ArgosState = ArgosState.STANDBY
    autopass: AutoPassState = AutoPassState.DISARM
    kaval: KavalState = KavalState.DISARM
    autopass_exited_from: AutoPassState | None = None
    kaval_exited_from: KavalState | None = None
    wait_unwind: bool = False


@dataclass(frozen=True)
class NetworkConfig:
    triggers: TriggerSet = field(default_factory=TriggerSet)
    # remapped: launch gate reads the blocking bit (negated), abort reads the
    # fallback bit, defense reads the abandoned bit. literal: the printed
    # guard forms on the printed bits, kept for trace comparison.
    bit_mode: str = "remapped"
    # the printed fallback-recovery interval is reversed (empty); setting
    # this replays it verbatim instead of the sane ordering
    fallback_recover_reversed: bool = False

    def __post_init__(self):
        if self.bit_mode not in ("remapped", "literal"):
            raise ValueError("bit_mode must be 'remapped' or 'literal'")


_FSC_TABLE = {
    (ArgosState.STANDBY, AutoPassState.DISARM, KavalState.DISARM): FscTag.FSC00,
    (ArgosState.RACE, AutoPassState.DISARM, KavalState.DISARM): FscTag.FSC10,
    (ArgosState.WAIT, AutoPassState.INIT, KavalState.DISARM): FscTag.FSC20,
    (ArgosState.WAIT, AutoPassState.DISARM, KavalState.INIT): FscTag.FSC21,
    (ArgosState.OVERTAKE, AutoPassState.PASS, KavalState.DISARM): FscTag.FSC30,
    (ArgosState.OVERTAKE, AutoPassState.ABANDON, KavalState.DISARM): FscTag.FSC31,
    (ArgosState.DEFEND, AutoPassState.DISARM, KavalState.BLOCK): FscTag.FSC40,
    (ArgosState.DEFEND, AutoPassState.DISARM, KavalState.FALLBACK): FscTag.FSC41,
}


def fsc_of(states: AutomatonStates) -> FscTag:
    """Tag for a state triple; Invalid for anything off the table.

    An Exit counts as the state it is leaving: exits are one-tick transients
    and the logged stream must never show a distinct exit tag.
    """
    ap = states.autopass
    if ap is AutoPassState.EXIT:
        ap = states.autopass_exited_from
        if ap not in (AutoPassState.PASS, AutoPassState.ABANDON):
            return FscTag.INVALID
    ka = states.kaval
    if ka is KavalState.EXIT:
        ka = states.kaval_exited_from
        if ka not in (KavalState.BLOCK, KavalState.FALLBACK):
            return FscTag.INVALID
    return _FSC_TABLE.get((states.argos, ap, ka), FscTag.INVALID)


# --- guard predicates ------------------------------------------------------
# Each state's outgoing guards are built as one dict so the exhaustive
# determinism test and the step functions share a single definition. Within
# any state at most one guard may be true for any input; the conjuncts below
# are arranged to partition the input space.

def _launch_gate(frame: InputFrame, trig: TriggerSet, cfg: NetworkConfig) -> bool:
    """Boost and opponent-word conditions required to start a pass."""
    if cfg.bit_mode == "literal":
        return (frame.boost_budget > trig.boost_launch_floor
                and has_bit(frame.opponent_word, OPP_ABANDONED))
    return (frame.boost_budget > trig.boost_launch_floor
            and not has_bit(frame.opponent_word, OPP_BLOCKING))


def _pass_abort(frame: InputFrame, trig: TriggerSet, cfg: NetworkConfig) -> bool:
    """Natural abandon condition while passing (forced events come separately)."""
    if cfg.bit_mode == "literal":
        return (frame.boost_budget < trig.boost_abort_floor
                or not has_bit(frame.opponent_word, OPP_ABANDONED))
    # budget floor, unless the defender has already yielded
    return (frame.boost_budget < trig.boost_abort_floor
            and not has_bit(frame.opponent_word, OPP_FALLBACK))


def _block_success_bit(cfg: NetworkConfig) -> int:
    return OPP_FALLBACK if cfg.bit_mode == "literal" else OPP_ABANDONED


def _in_follow_window(frame: InputFrame, trig: TriggerSet) -> bool:
    sep = abs(frame.separation)
    return trig.follow_min <= sep <= trig.follow_max and sep <= trig.tracking_range


def argos_guards(states, frame, bus, trig, aux, cfg) -> dict:
    """Outgoing guard truth values for the supervisor's current state."""
    black = frame.flag.color is FlagColor.BLACK
    s = states.argos
    if s is ArgosState.STANDBY:
        return {"ar0": not black and frame.active_reference is ReferenceTag.RACELINE}
    if s is ArgosState.RACE:
        return {"ar1": black,
                "ar2": not black and _in_follow_window(frame, trig)}
    if s is ArgosState.WAIT:
        if states.wait_unwind:
            return {"ar1": black, "ar8": not black}
        inside = _in_follow_window(frame, trig)
        blue = frame.flag.color is FlagColor.BLUE
        clear = abs(frame.separation) >= trig.launch_min
        # launch only once the armed automaton has reached its ready state;
        # after a role flip the arm needs one tick to take effect
        ot = (inside and blue and clear and not frame.is_leader
              and states.autopass is AutoPassState.INIT
              and aux.overtake_plan_viable and _launch_gate(frame, trig, cfg))
        df = (inside and blue and clear and frame.is_leader
              and states.kaval is KavalState.INIT
              and aux.defense_plan_viable)
        return {"ar1": black,
                "ar3": not black and not inside,
                "ar4": not black and ot,
                "ar6": not black and df}
    if s is ArgosState.OVERTAKE:
        return {"ar1": black,
                "ar5": not black and bus.done_pass and not bus.cut_pending,
                "ar9": not black and bus.done_pass and bus.cut_pending}
    # DEFEND
    return {"ar1": black,
            "ar7": not black and bus.done_block and not bus.cut_pending,
            "ar10": not black and bus.done_block and bus.cut_pending}


def autopass_guards(states, frame, bus, trig, aux, cfg) -> dict:
    black = frame.flag.color is FlagColor.BLACK
    blue = frame.flag.color is FlagColor.BLUE
    s = states.autopass
    if s is AutoPassState.DISARM:
        return {"ap0": not black and bus.arm_pass}
    if s is AutoPassState.INIT:
        return {"ap9": black,
                "ap1": not black and not bus.arm_pass,
                "ap2": not black and bus.launch_pass and _launch_gate(frame, trig, cfg)}
    if s is AutoPassState.PASS:
        ahead = frame.separation <= -trig.complete_lead
        return {"ap9": black,
                "ap8": not black and not blue,
                "ap6": not black and blue and ahead,
                "ap4": not black and blue and not ahead
                       and (aux.force_abandon or _pass_abort(frame, trig, cfg))}
    if s is AutoPassState.ABANDON:
        merged = trig.follow_min <= frame.separation <= trig.follow_max
        return {"ap9": black,
                "ap8": not black and not blue,
                "ap5": not black and blue and merged}
    # EXIT
    return {"ap9": black, "ap7": not black}


def kaval_guards(states, frame, bus, trig, aux, cfg) -> dict:
    black = frame.flag.color is FlagColor.BLACK
    blue = frame.flag.color is FlagColor.BLUE
    s = states.kaval
    if s is KavalState.DISARM:
        return {"ka0": not black and bus.arm_block}
    if s is KavalState.INIT:
        return {"ka9": black,
                "ka1": not black and not bus.arm_block,
                "ka2": not black and bus.launch_block}
    if s is KavalState.BLOCK:
        won = has_bit(frame.opponent_word, _block_success_bit(cfg))
        lost = aux.force_fallback or not frame.is_leader
        return {"ka9": black,
                "ka7": not black and not blue,
                "ka3": not black and blue and won and not aux.force_fallback,
                "ka4": not black and blue and lost
                       and not (won and not aux.force_fallback)}
    if s is KavalState.FALLBACK:
        if cfg.fallback_recover_reversed:
            recovered = trig.tracking_range <= frame.separation <= trig.follow_min
        else:
            recovered = trig.follow_min <= frame.separation <= trig.tracking_range
        return {"ka9": black,
                "ka7": not black and not blue,
                "ka5": not black and blue and recovered}
    # EXIT
    return {"ka9": black, "ka6": not black}


GUARD_FUNCTIONS = {
    "argos": argos_guards,
    "autopass": autopass_guards,
    "kaval": kaval_guards,
}


# --- step functions --------------------------------------------------------

def argos_step(states, frame, bus, trig, aux=_DEFAULT_AUX,
               cfg=None) -> tuple[AutomatonStates, list]:
    """One supervisor update. Returns (new states, fired edges).

    Fired edges are (automaton, from, to, guard_id) tuples; the network
    stamps time and tag on them afterwards.
    """
    cfg = cfg or _DEFAULT_CONFIG
    g = argos_guards(states, frame, bus, trig, aux, cfg)
    s = states.argos
    fired = []

    def go(target, guard_id, **changes):
        nonlocal states
        fired.append(("argos", s.value, target.value, guard_id))
        states = replace(states, argos=target, **changes)

    if g.get("ar1"):
        bus.reset()
        go(ArgosState.STANDBY, "ar1", wait_unwind=False)
    elif s is ArgosState.STANDBY and g["ar0"]:
        go(ArgosState.RACE, "ar0")
    elif s is ArgosState.RACE and g["ar2"]:
        go(ArgosState.WAIT, "ar2", wait_unwind=False)
    elif s is ArgosState.WAIT and states.wait_unwind:
        if g["ar8"]:
            bus.arm_pass = False
            bus.arm_block = False
            go(ArgosState.RACE, "ar8", wait_unwind=False)
    elif s is ArgosState.WAIT:
        if g["ar3"]:
            bus.arm_pass = False
            bus.arm_block = False
            go(ArgosState.RACE, "ar3")
        elif g["ar4"]:
            bus.launch_pass = True
            go(ArgosState.OVERTAKE, "ar4")
        elif g["ar6"]:
            bus.launch_block = True
            go(ArgosState.DEFEND, "ar6")
    elif s is ArgosState.OVERTAKE:
        if g["ar5"]:
            # unwind through Wait with the arm held for one more tick
            bus.launch_pass = False
            bus.done_pass = False
            go(ArgosState.WAIT, "ar5", wait_unwind=True)
        elif g["ar9"]:
            bus.clear_pass_signals()
            bus.cut_pending = False
            go(ArgosState.RACE, "ar9", wait_unwind=False)
    elif s is ArgosState.DEFEND:
        if g["ar7"]:
            bus.launch_block = False
            bus.done_block = False
            go(ArgosState.WAIT, "ar7", wait_unwind=True)
        elif g["ar10"]:
            bus.clear_block_signals()
            bus.cut_pending = False
            go(ArgosState.RACE, "ar10", wait_unwind=False)

    # a fresh Wait re-asserts the role arm every tick, entry included
    if states.argos is ArgosState.WAIT and not states.wait_unwind:
        if frame.is_leader:
            bus.arm_pass = False
            bus.arm_block = True
        else:
            bus.arm_pass = True
            bus.arm_block = False
    return states, fired


def autopass_step(states, frame, bus, trig, aux=_DEFAULT_AUX,
                  cfg=None) -> tuple[AutomatonStates, list]:
    """One overtake-automaton update; may chain exit -> disarm -> init."""
    cfg = cfg or _DEFAULT_CONFIG
    g = autopass_guards(states, frame, bus, trig, aux, cfg)
    s = states.autopass
    fired = []

    def go(target, guard_id, exited=None):
        nonlocal states
        fired.append(("autopass", states.autopass.value, target.value, guard_id))
        states = replace(states, autopass=target, autopass_exited_from=exited)

    def publish(payload):
        bus.pass_speed_ref = None if payload is None else payload[0]
        bus.pass_path_ref = None if payload is None else payload[1]

    def clear_payload():
        bus.pass_speed_ref = None
        bus.pass_path_ref = None

    if g.get("ap9"):
        clear_payload()
        go(AutoPassState.DISARM, "ap9")
    elif s is AutoPassState.DISARM:
        if g["ap0"]:
            go(AutoPassState.INIT, "ap0")
    elif s is AutoPassState.INIT:
        if g["ap1"]:
            go(AutoPassState.DISARM, "ap1")
        elif g["ap2"]:
            publish(aux.pass_payload)
            go(AutoPassState.PASS, "ap2")
    elif s is AutoPassState.PASS:
        if g["ap8"]:
            clear_payload()
            bus.done_pass = True
            bus.cut_pending = True
            go(AutoPassState.EXIT, "ap8", exited=AutoPassState.PASS)
        elif g["ap6"]:
            clear_payload()
            bus.done_pass = True
            go(AutoPassState.EXIT, "ap6", exited=AutoPassState.PASS)
        elif g["ap4"]:
            publish(aux.abandon_payload)
            go(AutoPassState.ABANDON, "ap4")
        else:
            publish(aux.pass_payload)
    elif s is AutoPassState.ABANDON:
        if g["ap8"]:
            clear_payload()
            bus.done_pass = True
            bus.cut_pending = True
            go(AutoPassState.EXIT, "ap8", exited=AutoPassState.ABANDON)
        elif g["ap5"]:
            clear_payload()
            bus.done_pass = True
            go(AutoPassState.EXIT, "ap5", exited=AutoPassState.ABANDON)
        else:
            publish(aux.abandon_payload)
    elif s is AutoPassState.EXIT:
        if g["ap7"]:
            go(AutoPassState.DISARM, "ap7")
            if bus.arm_pass:        # re-init for the one-tick wait unwind
                go(AutoPassState.INIT, "ap0")
    return states, fired


def kaval_step(states, frame, bus, trig, aux=_DEFAULT_AUX,
               cfg=None) -> tuple[AutomatonStates, list]:
    """One defense-automaton update; mirrors the overtake side."""
    cfg = cfg or _DEFAULT_CONFIG
    g = kaval_guards(states, frame, bus, trig, aux, cfg)
    s = states.kaval
    fired = []

    def go(target, guard_id, exited=None):
        nonlocal states
        fired.append(("kaval", states.kaval.value, target.value, guard_id))
        states = replace(states, kaval=target, kaval_exited_from=exited)

    def publish(payload):
        bus.block_speed_ref = None if payload is None else payload[0]
        bus.block_path_ref = None if payload is None else payload[1]

    def clear_payload():
        bus.block_speed_ref = None
        bus.block_path_ref = None

    if g.get("ka9"):
        clear_payload()
        go(KavalState.DISARM, "ka9")
    elif s is KavalState.DISARM:
        if g["ka0"]:
            go(KavalState.INIT, "ka0")
    elif s is KavalState.INIT:
        if g["ka1"]:
            go(KavalState.DISARM, "ka1")
        elif g["ka2"]:
            publish(aux.defense_payload)
            go(KavalState.BLOCK, "ka2")
    elif s is KavalState.BLOCK:
        if g["ka7"]:
            clear_payload()
            bus.done_block = True
            bus.cut_pending = True
            go(KavalState.EXIT, "ka7", exited=KavalState.BLOCK)
        elif g["ka3"]:
            clear_payload()
            bus.done_block = True
            go(KavalState.EXIT, "ka3", exited=KavalState.BLOCK)
        elif g["ka4"]:
            publish(aux.fallback_payload)
            go(KavalState.FALLBACK, "ka4")
        else:
            publish(aux.defense_payload)
    elif s is KavalState.FALLBACK:
        if g["ka7"]:
            clear_payload()
            bus.done_block = True
            bus.cut_pending = True
            go(KavalState.EXIT, "ka7", exited=KavalState.FALLBACK)
        elif g["ka5"]:
            clear_payload()
            bus.done_block = True
            go(KavalState.EXIT, "ka5", exited=KavalState.FALLBACK)
        else:
            publish(aux.fallback_payload)
    elif s is KavalState.EXIT:
        if g["ka6"]:
            go(KavalState.DISARM, "ka6")
            if bus.arm_block:
                go(KavalState.INIT, "ka0")
    return states, fired


def set_op0(bus: SignalBus) -> int:
    """Override request word from the published payloads.

    Bit 1: overtake path, bit 2: overtake speed, bit 4: defense path,
    bit 8: defense speed. Overlapping overtake and defense payloads are a
    framework bug and halt the run.
    """
    bus.validate()
    word = 0
    if bus.pass_path_ref is not None:
        word += 1
    if bus.pass_speed_ref is not None:
        word += 2
    if bus.block_path_ref is not None:
        word += 4
    if bus.block_speed_ref is not None:
        word += 8
    if word not in OP0_LEGAL:
        raise FrameworkInvariantError(f"illegal override word {word}")
    return word


@dataclass(frozen=True)
class OutputFrame:
    op0: int
    speed_ref: object
    path_ref: object


def mux_outputs(op0: int, bus: SignalBus) -> OutputFrame:
    """Select the tracker references for this override word.

    Partial overrides keep the global reference on the untouched channel.
    """
    if op0 not in OP0_LEGAL:
        raise FrameworkInvariantError(f"illegal override word {op0}")
    if op0 in (2, 3):
        speed = bus.pass_speed_ref
    elif op0 in (8, 12):
        speed = bus.block_speed_ref
    else:
        speed = bus.global_speed_ref
    if op0 in (1, 3):
        path = bus.pass_path_ref
    elif op0 in (4, 12):
        path = bus.block_path_ref
    else:
        path = bus.global_path_ref
    return OutputFrame(op0=op0, speed_ref=speed, path_ref=path)


# --- the network -----------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    t: float
    car_id: int
    automaton: str
    from_state: str
    to_state: str
    guard_id: str
    fsc: str


@dataclass(frozen=True)
class StepResult:
    states: AutomatonStates
    fsc: FscTag
    op0: int
    output: OutputFrame
    transitions: tuple


_DEFAULT_CONFIG = NetworkConfig()


class AutomataNetwork:
    """One car's supervisor + overtake + defense automatons with their bus."""

    def __init__(self, car_id: int = 0, config: NetworkConfig | None = None,
                 global_speed_ref=None, global_path_ref=None):
        self.car_id = car_id
        self.config = config or _DEFAULT_CONFIG
        self.states = AutomatonStates()
        self.bus = SignalBus(global_speed_ref=global_speed_ref,
                             global_path_ref=global_path_ref)

    def reset(self) -> None:
        self.states = AutomatonStates()
        self.bus.reset()

    def step(self, t: float, frame: InputFrame,
             aux: AuxInputs = _DEFAULT_AUX) -> StepResult:
        """One full network tick in the fixed update order."""
        trig = self.config.triggers
        fired = []
        self.states, f = argos_step(self.states, frame, self.bus, trig, aux, self.config)
        fired += f
        self.states, f = autopass_step(self.states, frame, self.bus, trig, aux, self.config)
        fired += f
        self.states, f = kaval_step(self.states, frame, self.bus, trig, aux, self.config)
        fired += f
        self.bus.validate()
        op0 = set_op0(self.bus)
        out = mux_outputs(op0, self.bus)
        tag = fsc_of(self.states)
        transitions = tuple(
            Transition(t=t, car_id=self.car_id, automaton=a, from_state=src,
                       to_state=dst, guard_id=gid, fsc=tag.value)
            for (a, src, dst, gid) in fired)
        return StepResult(states=self.states, fsc=tag, op0=op0, output=out,
                          transitions=transitions)


# Edge summary used by the generated documentation and the coverage test.
# (automaton, source, guard id, target, condition)
EDGE_TABLE = (
    ("argos", "standby", "ar0", "race", "global raceline active"),
    ("argos", "any", "ar1", "standby", "black flag (hard session end)"),
    ("argos", "race", "ar2", "wait", "|separation| inside the follow window and within tracking range"),
    ("argos", "wait", "ar3", "race", "|separation| left the follow window"),
    ("argos", "wait", "ar4", "overtake", "not leader, blue flag, launch distance, boost above launch floor, opponent gate, plan viable"),
    ("argos", "overtake", "ar5", "wait", "overtake completion signal (unwind leg, arm held one tick)"),
    ("argos", "wait", "ar6", "defend", "leader, blue flag, launch distance, plan viable"),
    ("argos", "defend", "ar7", "wait", "defense completion signal (unwind leg)"),
    ("argos", "wait", "ar8", "race", "unwind tick complete"),
    ("argos", "overtake", "ar9", "race", "completion signal with cut flag (zone lost, no unwind)"),
    ("argos", "defend", "ar10", "race", "completion signal with cut flag (zone lost, no unwind)"),
    ("autopass", "disarm", "ap0", "init", "arm wire high"),
    ("autopass", "init", "ap1", "disarm", "arm wire dropped"),
    ("autopass", "init", "ap2", "pass", "launch wire high and launch gate holds"),
    ("autopass", "pass", "ap4", "abandon", "budget under abort floor (opponent-yielded suppressed) or forced"),
    ("autopass", "abandon", "ap5", "exit", "merged back into the follow window behind the opponent"),
    ("autopass", "pass", "ap6", "exit", "opponent behind by the completion lead"),
    ("autopass", "exit", "ap7", "disarm", "unconditional next tick (re-inits while arm held)"),
    ("autopass", "pass/abandon", "ap8", "exit", "passing zone lost (cut)"),
    ("autopass", "any", "ap9", "disarm", "black flag (hard reset, no completion signal)"),
    ("kaval", "disarm", "ka0", "init", "arm wire high"),
    ("kaval", "init", "ka1", "disarm", "arm wire dropped"),
    ("kaval", "init", "ka2", "block", "launch wire high"),
    ("kaval", "block", "ka3", "exit", "opponent gave up the overtake"),
    ("kaval", "block", "ka4", "fallback", "lost the lead (or forced) and the opponent did not give up"),
    ("kaval", "fallback", "ka5", "exit", "merged behind at a recovered separation"),
    ("kaval", "exit", "ka6", "disarm", "unconditional next tick (re-inits while arm held)"),
    ("kaval", "block/fallback", "ka7", "exit", "passing zone lost (cut)"),
    ("kaval", "any", "ka9", "disarm", "black flag (hard reset, no completion signal)"),
)
