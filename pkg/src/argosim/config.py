"""Scenario and sweep configuration: flat key=value files with dotted paths.

The format is deliberately dumb: one `key = value` per line, `#` comments,
dotted paths naming nested sections (`track.turn_radius = 120`,
`cars.1.triggers.boost_launch_floor = 6.0`). Comma-separated values parse as
tuples. Unknown keys are rejected so a typo cannot silently fall back to a
default; the same check validates sweep axes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .automata import NetworkConfig, TriggerSet
from .race_control import RuleBook
from .track import TrackConfig
from .tracker import TrackerConfig
from .vehicle import VehicleParams


class ConfigError(Exception):
    """Bad configuration: unknown key, unparseable value, broken invariant."""


POLICIES = ("argos", "mule")


@dataclass(frozen=True)
class CarConfig:
    """Everything one car brings to a race."""
    policy: str = "argos"
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    triggers: TriggerSet = field(default_factory=TriggerSet)
    # lateral offset the pass/block plans aim for; wider than the planner's
    # bare default so rectangle footprints keep the full safety clearance
    lateral_offset: float = 10.0
    projection_time: float = 1.0        # [s] defender intercept look-ahead
    k_mult: float = 1.0                 # car lengths past the projection

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.lateral_offset <= 0 or self.projection_time <= 0:
            raise ValueError("car plan parameters must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    track: TrackConfig = field(default_factory=TrackConfig)
    laps: int = 5
    sim_dt: float = 0.02
    seed: int = 0
    cars: tuple = (CarConfig(), CarConfig())
    rules: RuleBook = field(default_factory=RuleBook)
    ip5_bit_mode: str = "remapped"
    fallback_recover_reversed: bool = False
    starting_order: tuple = (0, 1)      # front car first
    start_arc: float = 100.0            # [m] leader's starting arc position
    initial_gap: float = 40.0           # [m] arc gap back to the second car
    gap_jitter: float = 0.0             # [m] seeded uniform jitter on the gap
    lat_jitter: float = 0.0             # [m] seeded jitter on starting offset

    def __post_init__(self):
        if self.laps < 1:
            raise ValueError("laps must be at least 1")
        if self.sim_dt <= 0:
            raise ValueError("sim_dt must be positive")
        if len(self.cars) != 2:
            raise ValueError("exactly 2 cars")
        if sorted(self.starting_order) != [0, 1]:
            raise ValueError("starting_order must order car ids 0 and 1")
        if self.initial_gap <= 0:
            raise ValueError("initial_gap must be positive")
        if self.gap_jitter < 0 or self.lat_jitter < 0:
            raise ValueError("jitter amplitudes cannot be negative")

    def network_config(self, car: int) -> NetworkConfig:
        return NetworkConfig(triggers=self.cars[car].triggers,
                             bit_mode=self.ip5_bit_mode,
                             fallback_recover_reversed=self.fallback_recover_reversed)


@dataclass(frozen=True)
class SweepConfig:
    """One swept axis over a base scenario."""
    base: ScenarioConfig
    axis: str
    values: tuple
    seeds_per_value: int
    base_mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in _known_keys():
            raise ValueError(f"sweep axis '{self.axis}' is not a config field")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.seeds_per_value < 1:
            raise ValueError("seeds_per_value must be at least 1")

    def scenario_for(self, value, seed: int) -> ScenarioConfig:
        mapping = dict(self.base_mapping)
        mapping[self.axis] = _format_value(value)
        mapping["seed"] = str(seed)
        return build_scenario(mapping)


# --- parsing ---------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    """Flat mapping of dotted keys to raw value strings."""
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        mapping[key] = value
    return mapping


def _parse_scalar(s: str):
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_value(s: str):
    if "," in s:
        return tuple(_parse_scalar(p) for p in s.split(","))
    return _parse_scalar(s)


def _format_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(p) for p in v)
    return str(v)


# --- key registry ----------------------------------------------------------

def _section_fields(cls) -> tuple:
    return tuple(f.name for f in dataclasses.fields(cls))

_TOP_SCALARS = ("laps", "sim_dt", "seed", "ip5_bit_mode",
                "fallback_recover_reversed", "starting_order", "start_arc",
                "initial_gap", "gap_jitter", "lat_jitter")
_CAR_SCALARS = ("policy", "lateral_offset", "projection_time", "k_mult")
_TRIGGER_KEYS = _section_fields(TriggerSet) + tuple(TriggerSet.ALIASES)


def _known_keys() -> set:
    keys = set(_TOP_SCALARS)
    keys.update(f"track.{f}" for f in _section_fields(TrackConfig))
    keys.update(f"rules.{f}" for f in _section_fields(RuleBook))
    keys.update(f"triggers.{f}" for f in _TRIGGER_KEYS)
    for i in (0, 1):
        keys.update(f"cars.{i}.{s}" for s in _CAR_SCALARS)
        keys.update(f"cars.{i}.vehicle.{f}" for f in _section_fields(VehicleParams))
        keys.update(f"cars.{i}.tracker.{f}" for f in _section_fields(TrackerConfig))
        keys.update(f"cars.{i}.triggers.{f}" for f in _TRIGGER_KEYS)
    return keys


def _trigger_field(name: str) -> str:
    return TriggerSet.ALIASES.get(name, name)


# --- construction ----------------------------------------------------------

def build_scenario(mapping: dict) -> ScenarioConfig:
    """Assemble a ScenarioConfig from a flat raw-string mapping.

    Global `triggers.*` keys apply to both cars; `cars.N.triggers.*` wins
    for that car. Every invariant failure surfaces as ConfigError.
    """
    known = _known_keys()
    unknown = sorted(k for k in mapping if k not in known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    vals = {k: parse_value(v) for k, v in mapping.items()}

    def section(prefix: str) -> dict:
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in vals.items()
                if k.startswith(prefix + ".") and "." not in k[plen:]}

    def build(cls, kwargs: dict, what: str):
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad {what}: {e}") from None

    track = build(TrackConfig, section("track"), "track config")
    rules = build(RuleBook, section("rules"), "rule book")
    shared_trig = {_trigger_field(k): v for k, v in section("triggers").items()}

    cars = []
    for i in (0, 1):
        p = f"cars.{i}"
        trig_kwargs = dict(shared_trig)
        trig_kwargs.update({_trigger_field(k): v
                            for k, v in section(f"{p}.triggers").items()})
        car_kwargs = {
            "vehicle": build(VehicleParams, section(f"{p}.vehicle"),
                             f"car {i} vehicle params"),
            "tracker": build(TrackerConfig, section(f"{p}.tracker"),
                             f"car {i} tracker config"),
            "triggers": build(TriggerSet, trig_kwargs, f"car {i} triggers"),
        }
        for s in _CAR_SCALARS:
            if f"{p}.{s}" in vals:
                car_kwargs[s] = vals[f"{p}.{s}"]
        cars.append(build(CarConfig, car_kwargs, f"car {i}"))

    top = {k: vals[k] for k in _TOP_SCALARS if k in vals}
    order = top.get("starting_order")
    if order is not None and not isinstance(order, tuple):
        raise ConfigError("starting_order must be two comma-separated car ids")
    scenario = build(ScenarioConfig,
                     dict(top, track=track, rules=rules, cars=tuple(cars)),
                     "scenario")
    if scenario.ip5_bit_mode not in ("remapped", "literal"):
        raise ConfigError("ip5_bit_mode must be 'remapped' or 'literal'")
    return scenario


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    return build_scenario(parse_config_text(text))


def load_sweep(path, axis: str, values, seeds_per_value: int) -> SweepConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            mapping = parse_config_text(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    base = build_scenario(mapping)
    try:
        return SweepConfig(base=base, axis=axis, values=tuple(values),
                           seeds_per_value=seeds_per_value,
                           base_mapping=mapping)
    except ValueError as e:
        raise ConfigError(str(e)) from None
