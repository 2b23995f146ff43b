"""Scenario configuration: an INI-style ``key = value`` file with one section
per concern.

Example::

    [scenario]
    n_relays = 100
    meeting_rate = 0.37043
    horizon = 20000
    epsilon = 0.05
    runs = 20000
    backend = meeting

    [timeout]
    t_g = optimal

A ``[mobility]`` section replaces ``meeting_rate``; exactly one of the two
may be given.  Exactly one of ``[timeout]`` / ``[antipacket]`` selects the
immunity scheme (timeout with the optimal timer is assumed when neither is
present).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Union

from .analytic import (
    AntipacketPolicy,
    EpidemicParams,
    ReliabilityTarget,
    TimeoutPolicy,
    optimal_global_timeout,
)
from .mobility import PUBLISHED_RELATIVE_SPEED, MobilitySpec, Model, estimate_relative_speed, pairwise_meeting_rate

BACKENDS = ("analytic", "ode", "meeting", "spatial")
SWEEP_AXES = ("n_relays", "meeting_rate", "t_g", "epsilon", "kappa", "t_d")
HOUR_LABELS = ("h", "hour", "hours")

DEFAULT_MEETING_RATE = 0.37043
DEFAULT_HORIZON = 20000.0
DEFAULT_EPSILON = 0.05


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


@dataclass(frozen=True)
class TimeoutScheme:
    t_g: float | None = None  # None: optimal timer for the configured epsilon


@dataclass(frozen=True)
class AntipacketScheme:
    kappa: float = 1.0
    t_d: float | None = None  # delivery instant for analytic trajectories


SchemeConfig = Union[TimeoutScheme, AntipacketScheme]


@dataclass(frozen=True)
class ScenarioConfig:
    n_relays: int = 100
    initial_infected_fraction: float | None = None  # None: 1/N
    meeting_rate: float | None = DEFAULT_MEETING_RATE
    mobility: MobilitySpec | None = None
    relative_speed: str = "published"  # "published", "estimated" or a number in km/h
    scheme: SchemeConfig = field(default_factory=TimeoutScheme)
    horizon: float = DEFAULT_HORIZON
    epsilon: float | None = DEFAULT_EPSILON
    runs: int = 1000
    master_seed: int = 0
    backend: str = "analytic"
    time_unit_label: str = "time unit"
    hours_per_time_unit: float | None = None
    dt: float | None = None
    warmup: float | None = None

    def __post_init__(self):
        if self.n_relays < 1:
            raise ConfigError("n_relays must be >= 1")
        if (self.meeting_rate is None) == (self.mobility is None):
            raise ConfigError("give exactly one of meeting_rate or a [mobility] section")
        if self.meeting_rate is not None and self.meeting_rate <= 0:
            raise ConfigError("meeting_rate must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {', '.join(BACKENDS)}")
        if self.backend in ("meeting", "spatial") and self.runs < 1:
            raise ConfigError("runs must be >= 1 for simulation backends")
        if self.backend == "spatial" and self.mobility is None:
            raise ConfigError("the spatial backend needs a [mobility] section")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]")
        if isinstance(self.scheme, TimeoutScheme):
            if self.scheme.t_g is None and self.epsilon is None:
                raise ConfigError("t_g = optimal needs epsilon")
            if self.scheme.t_g is not None and self.scheme.t_g < 0:
                raise ConfigError("t_g must be >= 0")
        elif isinstance(self.scheme, AntipacketScheme):
            if not 0 <= self.scheme.kappa <= 1:
                raise ConfigError("kappa must lie in [0, 1]")
            if self.scheme.t_d is not None and not 0 <= self.scheme.t_d <= self.horizon:
                raise ConfigError("t_d must lie in [0, horizon]")
        else:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.mobility is not None:
            if self.hours_per_time_unit is None and self.time_unit_label not in HOUR_LABELS:
                raise ConfigError(
                    "mobility rates are per hour; set hours_per_time_unit when "
                    f"time_unit_label is {self.time_unit_label!r}"
                )
            if self.relative_speed not in ("published", "estimated"):
                try:
                    if float(self.relative_speed) <= 0:
                        raise ValueError
                except ValueError:
                    raise ConfigError(
                        "relative_speed must be 'published', 'estimated' or a positive number"
                    ) from None
        if self.hours_per_time_unit is not None and self.hours_per_time_unit <= 0:
            raise ConfigError("hours_per_time_unit must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.warmup is not None and self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        i0 = self.initial_infected_fraction
        if i0 is not None and (not 0 < i0 <= 1 or self.n_relays * i0 < 1 - 1e-9):
            raise ConfigError("initial_infected_fraction must lie in [1/N, 1]")

    # -- resolved quantities -------------------------------------------------

    @property
    def i0(self) -> float:
        if self.initial_infected_fraction is None:
            return 1.0 / self.n_relays
        return self.initial_infected_fraction

    @property
    def hours(self) -> float:
        """Hours per simulation time unit (1 when not set)."""
        return 1.0 if self.hours_per_time_unit is None else self.hours_per_time_unit

    def relative_speed_value(self) -> float:
        spec = self.mobility
        if self.relative_speed == "published":
            return PUBLISHED_RELATIVE_SPEED[spec.model.value]
        if self.relative_speed == "estimated":
            return estimate_relative_speed(spec, seed=self.master_seed)
        return float(self.relative_speed)

    def pair_rate_per_hour(self) -> float:
        """Physical pairwise meeting rate of the mobility model, 1/h."""
        return pairwise_meeting_rate(self.mobility, self.relative_speed_value())

    def model_rate(self) -> float:
        """Fluid meeting rate lambda in 1/time-unit.

        A node meets each other node at rate ``lambda / N``; with mobility the
        physical pairwise rate is therefore scaled up by ``N``.
        """
        if self.meeting_rate is not None:
            return self.meeting_rate
        return self.n_relays * self.pair_rate_per_hour() * self.hours

    def params(self) -> EpidemicParams:
        return EpidemicParams(self.n_relays, self.i0, self.model_rate())

    def target(self) -> ReliabilityTarget:
        if self.epsilon is None:
            raise ConfigError("epsilon is not set")
        try:
            return ReliabilityTarget(self.epsilon)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def timeout_policy(self) -> TimeoutPolicy:
        if not isinstance(self.scheme, TimeoutScheme):
            raise ConfigError("scenario does not use the timeout scheme")
        if self.scheme.t_g is not None:
            return TimeoutPolicy(self.scheme.t_g)
        return TimeoutPolicy(optimal_global_timeout(self.params(), self.target()))

    def antipacket_policy(self) -> AntipacketPolicy:
        if not isinstance(self.scheme, AntipacketScheme):
            raise ConfigError("scenario does not use the antipacket scheme")
        return AntipacketPolicy(self.scheme.kappa, self.horizon)

    def sim_mobility(self) -> MobilitySpec:
        """Mobility spec with speeds in distance per time unit."""
        return self.mobility.in_time_unit(self.hours)

    def spatial_dt(self) -> float:
        """Stepping interval; default keeps the per-step displacement at r/5."""
        if self.dt is not None:
            return self.dt
        spec = self.sim_mobility()
        if spec.v_max == 0:
            return self.horizon / 1000
        return spec.tx_range / (5.0 * spec.v_max)

    def spatial_warmup(self) -> float:
        """Mobility warm-up before the packet is injected; default two area
        crossings at mean speed, letting RWP reach its stationary density."""
        if self.warmup is not None:
            return self.warmup
        spec = self.sim_mobility()
        mean_speed = 0.5 * (spec.v_min + spec.v_max)
        return 2.0 * spec.side_length / mean_speed if mean_speed > 0 else 0.0


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioConfig
    axis: str
    values: tuple

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        for v in self.values:
            apply_axis(self.base, self.axis, v)


def apply_axis(config: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Config with one sweep parameter replaced."""
    try:
        if axis == "n_relays":
            return replace(config, n_relays=int(value))
        if axis == "meeting_rate":
            return replace(config, meeting_rate=float(value), mobility=None)
        if axis == "epsilon":
            return replace(config, epsilon=float(value))
        if axis == "t_g":
            return replace(config, scheme=TimeoutScheme(float(value)))
        if axis == "kappa":
            scheme = config.scheme if isinstance(config.scheme, AntipacketScheme) else AntipacketScheme()
            return replace(config, scheme=replace(scheme, kappa=float(value)))
        if axis == "t_d":
            scheme = config.scheme if isinstance(config.scheme, AntipacketScheme) else AntipacketScheme()
            return replace(config, scheme=replace(scheme, t_d=float(value)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for axis {axis}: {exc}") from None
    raise ConfigError(f"unknown sweep axis {axis!r}")


# -- text format ---------------------------------------------------------------

_SCENARIO_KEYS = {
    "n_relays": int,
    "initial_infected_fraction": float,
    "meeting_rate": float,
    "horizon": float,
    "epsilon": float,
    "runs": int,
    "master_seed": int,
    "backend": str,
    "time_unit_label": str,
    "hours_per_time_unit": float,
    "dt": float,
    "warmup": float,
}
_MOBILITY_KEYS = {
    "model": str,
    "side_length": float,
    "tx_range": float,
    "v_min": float,
    "v_max": float,
    "leg_duration": float,
    "waypoint_constant": float,
    "boundary": str,
}


def _convert(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _read_section(parser, name, schema, extra=()):
    out = {}
    for key, raw in parser[name].items():
        if key in extra:
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        out[key] = _convert(name, key, raw, schema[key])
    return out


def loads(text: str) -> tuple[ScenarioConfig, dict]:
    """Parse config text; returns the scenario and any ``[sweep]`` entries."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    known = {"scenario", "timeout", "antipacket", "mobility", "sweep"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    kwargs = {}
    if parser.has_section("scenario"):
        sec = parser["scenario"]
        kwargs = _read_section(parser, "scenario", _SCENARIO_KEYS, extra=("epsilon",))
        if "epsilon" in sec:
            raw = sec["epsilon"].strip()
            kwargs["epsilon"] = None if raw == "none" else _convert("scenario", "epsilon", raw, float)

    if parser.has_section("mobility"):
        mob = _read_section(parser, "mobility", _MOBILITY_KEYS, extra=("relative_speed",))
        if "relative_speed" in parser["mobility"]:
            kwargs["relative_speed"] = parser["mobility"]["relative_speed"].strip()
        try:
            kwargs["mobility"] = MobilitySpec(**mob)
        except ValueError as exc:
            raise ConfigError(f"[mobility] {exc}") from None
        kwargs.setdefault("meeting_rate", None)
        if kwargs["meeting_rate"] is not None:
            raise ConfigError("give exactly one of meeting_rate or a [mobility] section")

    has_timeout = parser.has_section("timeout")
    has_anti = parser.has_section("antipacket")
    if has_timeout and has_anti:
        raise ConfigError("give only one of [timeout] or [antipacket]")
    if has_anti:
        sec = parser["antipacket"]
        extra = set(sec) - {"kappa", "t_d"}
        if extra:
            raise ConfigError(f"unknown key(s) in [antipacket]: {', '.join(sorted(extra))}")
        kappa = _convert("antipacket", "kappa", sec.get("kappa", "1.0"), float)
        t_d = _convert("antipacket", "t_d", sec["t_d"], float) if "t_d" in sec else None
        kwargs["scheme"] = AntipacketScheme(kappa, t_d)
    else:
        t_g = None
        if has_timeout:
            sec = parser["timeout"]
            extra = set(sec) - {"t_g"}
            if extra:
                raise ConfigError(f"unknown key(s) in [timeout]: {', '.join(sorted(extra))}")
            raw = sec.get("t_g", "optimal").strip()
            if raw != "optimal":
                t_g = _convert("timeout", "t_g", raw, float)
        kwargs["scheme"] = TimeoutScheme(t_g)

    sweep = {}
    if parser.has_section("sweep"):
        sec = parser["sweep"]
        if set(sec) - {"axis", "values"}:
            raise ConfigError("[sweep] accepts only axis and values")
        sweep = {
            "axis": sec.get("axis"),
            "values": [v.strip() for v in sec.get("values", "").split(",") if v.strip()],
        }
    try:
        return ScenarioConfig(**kwargs), sweep
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path) -> tuple[ScenarioConfig, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Model):
        return value.value
    return str(value)


def dumps(config: ScenarioConfig) -> str:
    """Serialize every explicitly set field; ``loads(dumps(c)) == c``."""
    lines = ["[scenario]"]
    for name in _SCENARIO_KEYS:
        value = getattr(config, name)
        if value is not None:
            lines.append(f"{name} = {_fmt(value)}")
        elif name == "epsilon":
            lines.append("epsilon = none")
    scheme = config.scheme
    if isinstance(scheme, TimeoutScheme):
        lines += ["", "[timeout]", f"t_g = {'optimal' if scheme.t_g is None else _fmt(scheme.t_g)}"]
    else:
        lines += ["", "[antipacket]", f"kappa = {_fmt(scheme.kappa)}"]
        if scheme.t_d is not None:
            lines.append(f"t_d = {_fmt(scheme.t_d)}")
    if config.mobility is not None:
        lines += ["", "[mobility]"]
        for f in fields(MobilitySpec):
            value = getattr(config.mobility, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_fmt(value)}")
        lines.append(f"relative_speed = {config.relative_speed}")
    return "\n".join(lines) + "\n"


def dump(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(config))


def resolved_summary(config: ScenarioConfig) -> list[str]:
    """Derived values worth recording next to the raw config."""
    out = [f"lambda = {config.model_rate()!r} per {config.time_unit_label}", f"I0 = {config.i0!r}"]
    if config.mobility is not None:
        out.append(f"pairwise_rate_per_hour = {config.pair_rate_per_hour()!r}")
        out.append(f"relative_speed_kmh = {config.relative_speed_value()!r}")
    if isinstance(config.scheme, TimeoutScheme):
        try:
            out.append(f"t_g = {config.timeout_policy().t_g!r}")
        except (ConfigError, ValueError):
            pass
    return out

