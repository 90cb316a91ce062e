"""Trace verification: tag-stream validity, maneuver classification, counters.

Every race emits a per-car stream of framework tags. This module checks the
stream three ways: each tag must be one of the eight valid combinations;
every completed maneuver excursion must match one of the four reference
sequences (successful/abandoned overtake, successful/failed defense); and
the per-car counters must satisfy the attempt conservation identity, plus
the two-car symmetry check pairing one side's successes with the other's
failed defenses.

Pure post-processing: re-running on a stored log reproduces the verdict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

VALID_TAGS = frozenset((
    "fsc00", "fsc10", "fsc20", "fsc21", "fsc30", "fsc31", "fsc40", "fsc41"))
ARMED_TAGS = frozenset(("fsc20", "fsc21"))
MANEUVER_TAGS = frozenset(("fsc30", "fsc31", "fsc40", "fsc41"))
OVERTAKE_TAGS = frozenset(("fsc30", "fsc31"))

# reference temporal sequences after duplicate compression
SEQUENCE_PATTERNS = {
    ("fsc10", "fsc20", "fsc30", "fsc20", "fsc10"): "e0",
    ("fsc10", "fsc20", "fsc30", "fsc31", "fsc20", "fsc10"): "e1",
    ("fsc10", "fsc21", "fsc40", "fsc21", "fsc10"): "e2",
    ("fsc10", "fsc21", "fsc40", "fsc41", "fsc21", "fsc10"): "e3",
}


@dataclass(frozen=True)
class TraceEvent:
    t: float
    car_id: int
    fsc: str


@dataclass(frozen=True)
class ManeuverTrace:
    """One excursion from steady racing into a maneuver and back.

    fsc_sequence is duplicate-compressed and includes the bounding fsc10
    tags when present. Outcome dnf covers zone-cut returns (maneuver tag
    straight back to fsc10 with no unwind tag) and session truncation.
    """
    kind: str                   # overtake | defense
    fsc_sequence: tuple
    outcome: str                # success | failed | dnf
    t_start: float = 0.0
    t_end: float = 0.0
    # when the armed-wait tag was entered; [t_armed, t_end] is the episode
    # window used to decide whether two cars' maneuvers were concurrent
    t_armed: float = 0.0


@dataclass(frozen=True)
class CounterSet:
    """Per-car maneuver counters for one session."""
    overtake_opportunities: int = 0
    overtake_attempts: int = 0
    overtake_successes: int = 0
    overtake_abandons: int = 0
    overtake_dnf: int = 0
    defense_opportunities: int = 0
    defense_attempts: int = 0
    defense_successes: int = 0
    defense_failures: int = 0
    defense_dnf: int = 0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} cannot be negative")

    @property
    def overtake_conserved(self) -> bool:
        return (self.overtake_attempts
                == self.overtake_successes + self.overtake_abandons + self.overtake_dnf)

    @property
    def defense_conserved(self) -> bool:
        return (self.defense_attempts
                == self.defense_successes + self.defense_failures + self.defense_dnf)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Verdict:
    fsc_valid: bool = True
    first_invalid: TraceEvent | None = None
    sequences_ok: bool = True
    counterexamples: list = field(default_factory=list)
    conservation_ok: bool = True
    cross_check_ok: bool | None = None   # None when the check was skipped

    @property
    def passed(self) -> bool:
        return (self.fsc_valid and self.sequences_ok and self.conservation_ok
                and self.cross_check_ok is not False)

    def to_dict(self) -> dict:
        return {
            "fsc_valid": self.fsc_valid,
            "first_invalid": (None if self.first_invalid is None else {
                "t": self.first_invalid.t, "car": self.first_invalid.car_id,
                "fsc": self.first_invalid.fsc}),
            "sequences_ok": self.sequences_ok,
            "counterexamples": [
                {"car": car, "sequence": list(seq)} for car, seq in self.counterexamples],
            "conservation_ok": self.conservation_ok,
            "cross_check_ok": self.cross_check_ok,
            "passed": self.passed,
        }


def validate_fsc_stream(events) -> TraceEvent | None:
    """First event carrying a tag outside the valid table, or None if clean."""
    for ev in events:
        if ev.fsc not in VALID_TAGS:
            return ev
    return None


def compress_stream(events):
    """Drop consecutive duplicate tags, keeping the first event of each run."""
    out = []
    for ev in events:
        if not out or out[-1].fsc != ev.fsc:
            out.append(ev)
    return out


def segment_maneuvers(events) -> list:
    """Cut one car's stream into maneuver excursions.

    An excursion departs fsc10 into an armed-wait tag. Ones that come back
    to fsc10 without reaching a maneuver tag are idle bounces, not traces.
    A maneuver tag returning directly to fsc10 (no unwind wait between) is
    a zone cut; that and session truncation read as dnf.
    """
    comp = compress_stream(events)
    tags = [e.fsc for e in comp]
    traces = []
    i = 0
    n = len(tags)
    while i < n:
        if tags[i] != "fsc10" or i + 1 >= n or tags[i + 1] not in ARMED_TAGS:
            i += 1
            continue
        j = i + 1
        while j < n and tags[j] not in ("fsc10", "fsc00"):
            j += 1
        closed = j < n and tags[j] == "fsc10"
        seq = tuple(tags[i:j + 1]) if closed else tuple(tags[i:j])
        body = set(seq[1:])
        reached = body & MANEUVER_TAGS
        if closed and not reached:
            i = j       # bounce; the closing fsc10 can open the next excursion
            continue
        if reached:
            kind = "overtake" if reached & OVERTAKE_TAGS else "defense"
        else:
            kind = "overtake" if seq[-1] == "fsc20" else "defense"
        if not closed:
            outcome = "dnf"
        elif tags[j - 1] in MANEUVER_TAGS:
            outcome = "dnf"
        elif "fsc31" in reached or "fsc41" in reached:
            outcome = "failed"
        else:
            outcome = "success"
        t_end = comp[j].t if closed else comp[-1].t
        traces.append(ManeuverTrace(kind=kind, fsc_sequence=seq, outcome=outcome,
                                    t_start=comp[i].t, t_end=t_end,
                                    t_armed=comp[i + 1].t))
        if not closed:
            break
        i = j
    return traces


def classify(trace: ManeuverTrace) -> str:
    """Match a completed trace against the four reference sequences."""
    if trace.outcome == "dnf":
        raise ValueError("dnf traces are not classifiable")
    return SEQUENCE_PATTERNS.get(tuple(trace.fsc_sequence), "counterexample")


def tally(traces, opportunities=(0, 0)) -> CounterSet:
    """Fold one car's traces into counters; conservation holds by construction.

    opportunities is the externally counted (overtake, defense) pair of
    armed-wait entries inside passing zones.
    """
    c = {"overtake": {"success": 0, "failed": 0, "dnf": 0},
         "defense": {"success": 0, "failed": 0, "dnf": 0}}
    for tr in traces:
        c[tr.kind][tr.outcome] += 1
    ot, df = c["overtake"], c["defense"]
    return CounterSet(
        overtake_opportunities=opportunities[0],
        overtake_attempts=ot["success"] + ot["failed"] + ot["dnf"],
        overtake_successes=ot["success"],
        overtake_abandons=ot["failed"],
        overtake_dnf=ot["dnf"],
        defense_opportunities=opportunities[1],
        defense_attempts=df["success"] + df["failed"] + df["dnf"],
        defense_successes=df["success"],
        defense_failures=df["failed"],
        defense_dnf=df["dnf"],
    )


def cross_check(counters_a: CounterSet, counters_b: CounterSet) -> bool:
    """Each side's overtake successes must equal the other's failed defenses.

    Failed defenses are counted as attempts minus successes minus dnf, so a
    defense truncated by session end does not demand a matching success.
    """
    a_ok = counters_a.overtake_successes == (
        counters_b.defense_attempts - counters_b.defense_successes
        - counters_b.defense_dnf)
    b_ok = counters_b.overtake_successes == (
        counters_a.defense_attempts - counters_a.defense_successes
        - counters_a.defense_dnf)
    return a_ok and b_ok


def split_by_car(events) -> dict:
    streams = {}
    for ev in events:
        streams.setdefault(ev.car_id, []).append(ev)
    return streams


def _episodes_overlap(a: ManeuverTrace, b: ManeuverTrace) -> bool:
    return a.t_armed <= b.t_end and b.t_armed <= a.t_end


def engaged_traces(own, other) -> list:
    """Subset of one car's traces whose episode window overlapped an
    opposite-kind maneuver by the other car.

    An overtake nobody defended against, or a block against a car that never
    attacked, has no partner to mirror it and is excluded from the symmetry
    check.
    """
    out = []
    for tr in own:
        want = "defense" if tr.kind == "overtake" else "overtake"
        if any(o.kind == want and _episodes_overlap(tr, o) for o in other):
            out.append(tr)
    return out


def verify_race(events, opportunities=None, cross_check_enabled=True):
    """Full verdict over a mixed-car event stream.

    opportunities: {car_id: (overtake, defense)} counted live by the runner.
    Returns (verdict, counters per car, traces per car). The symmetry check
    runs over engaged episodes only; the full-session counters returned here
    keep every trace.
    """
    opportunities = opportunities or {}
    verdict = Verdict()
    bad = validate_fsc_stream(events)
    if bad is not None:
        verdict.fsc_valid = False
        verdict.first_invalid = bad
    streams = split_by_car(events)
    counters = {}
    traces_by_car = {}
    for car, stream in sorted(streams.items()):
        traces = segment_maneuvers(stream)
        traces_by_car[car] = traces
        for tr in traces:
            if tr.outcome != "dnf" and classify(tr) == "counterexample":
                verdict.counterexamples.append((car, tr.fsc_sequence))
        counters[car] = tally(traces, opportunities.get(car, (0, 0)))
    verdict.sequences_ok = not verdict.counterexamples
    verdict.conservation_ok = all(
        c.overtake_conserved and c.defense_conserved for c in counters.values())
    if cross_check_enabled and len(counters) == 2:
        ca, cb = sorted(traces_by_car)
        ea = tally(engaged_traces(traces_by_car[ca], traces_by_car[cb]))
        eb = tally(engaged_traces(traces_by_car[cb], traces_by_car[ca]))
        verdict.cross_check_ok = cross_check(ea, eb)
    return verdict, counters, traces_by_car
