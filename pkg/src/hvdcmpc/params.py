"""Parameter containers, validation and config file loading.

All electrical quantities are per-unit on the station base; time constants
and cut-off frequencies are in absolute units (seconds, rad/s).  Inductor
and capacitor dynamics carry an explicit omega_b factor, so per-unit
reactances/susceptances are used directly with time in seconds.
"""

import math
from dataclasses import dataclass, field, asdict

import yaml


class ConfigError(ValueError):
    """Raised when a configuration file is malformed or out of bounds."""


# Sanity bounds on grid frequency (pu); overridable through load_config.
OMEGA_G_BOUNDS = (0.9, 1.1)


def _require(cond, name, message):
    if not cond:
        raise ConfigError(f"{name}: {message}")


@dataclass(frozen=True)
class BaseValues:
    """System base quantities (SI)."""

    s_base: float = 200.0e6       # VA
    v_ac_base: float = 230.0e3    # V, line voltage
    v_dc_base: float = 200.0e3    # V
    f_hz: float = 50.0            # nominal grid frequency

    @property
    def omega_b(self) -> float:
        return 2.0 * math.pi * self.f_hz

    @property
    def z_dc_base(self) -> float:
        return self.v_dc_base ** 2 / self.s_base

    def validate(self):
        for name in ("s_base", "v_ac_base", "v_dc_base", "f_hz"):
            _require(getattr(self, name) > 0.0, f"base.{name}", "must be strictly positive")


@dataclass(frozen=True)
class StationParams:
    """Per-unit electrical parameters of one converter station."""

    l_c: float = 0.15        # converter reactor inductance
    r_c: float = 0.0015      # converter reactor resistance
    c_f: float = 0.094       # filter capacitance
    l_g: float = 0.0739      # grid inductance
    r_g: float = 0.0521      # grid resistance
    l_t: float = 0.15        # transformer series inductance
    r_t: float = 0.027       # transformer series resistance
    c_dc: float = 4.2224     # dc-link capacitance
    v_g_mag: float = 1.0     # grid voltage amplitude
    omega_g: float = 1.0     # grid frequency

    def validate(self, prefix="station", omega_g_bounds=OMEGA_G_BOUNDS):
        for name in ("l_c", "c_f", "l_g", "l_t", "c_dc"):
            _require(getattr(self, name) > 0.0, f"{prefix}.{name}", "must be strictly positive")
        for name in ("r_c", "r_g", "r_t"):
            _require(getattr(self, name) >= 0.0, f"{prefix}.{name}", "must be non-negative")
        _require(self.v_g_mag > 0.0, f"{prefix}.v_g_mag", "must be strictly positive")
        lo, hi = omega_g_bounds
        _require(lo <= self.omega_g <= hi, f"{prefix}.omega_g", f"must lie within [{lo}, {hi}]")


@dataclass(frozen=True)
class DcLineParams:
    """Overhead/cable dc line, ohmic values per km."""

    length_km: float = 75.0
    l_per_km: float = 2.615e-3   # H/km
    r_per_km: float = 0.011      # ohm/km

    def validate(self):
        _require(self.length_km > 0.0, "dc_line.length_km", "must be strictly positive")
        _require(self.l_per_km > 0.0, "dc_line.l_per_km", "must be strictly positive")
        _require(self.r_per_km >= 0.0, "dc_line.r_per_km", "must be non-negative")


@dataclass(frozen=True)
class PllParams:
    """Grid synchronization loop: low-pass filters plus PI frequency tracking.

    Default gains give a natural frequency near 220 rad/s at damping 0.85,
    so the loop re-locks in roughly 20 ms after an operating-point change.
    """

    omega_lp: float = 500.0   # rad/s low-pass cut-off
    k_p: float = 1.2          # proportional gain (pu)
    k_i: float = 160.0        # integral gain (pu/s)

    def validate(self):
        _require(self.omega_lp > 0.0, "pll.omega_lp", "must be strictly positive")
        _require(self.k_p >= 0.0, "pll.k_p", "must be non-negative")
        _require(self.k_i >= 0.0, "pll.k_i", "must be non-negative")


@dataclass(frozen=True)
class DampingParams:
    """High-pass voltage feedback that damps the filter resonance.

    Defaults: gain 0.2, cut-off omega_b/10 so the high-pass passband covers
    the LC resonance of the default electrical parameters.
    """

    k_ad: float = 0.2
    omega_ad: float = 2.0 * math.pi * 50.0 / 10.0

    def validate(self):
        _require(self.k_ad >= 0.0, "damping.k_ad", "must be non-negative")
        _require(self.omega_ad > 0.0, "damping.omega_ad", "must be strictly positive")


@dataclass(frozen=True)
class MpcBounds:
    """Double-sided output-current and input-voltage limits (pu)."""

    i_d_min: float = -1.2
    i_d_max: float = 1.2
    i_q_min: float = -1.2
    i_q_max: float = 1.2
    v_d_min: float = -1.2
    v_d_max: float = 1.2
    v_q_min: float = -1.2
    v_q_max: float = 1.2

    def validate(self):
        for axis in ("i_d", "i_q", "v_d", "v_q"):
            lo = getattr(self, axis + "_min")
            hi = getattr(self, axis + "_max")
            _require(lo < hi, f"mpc.bounds.{axis}", f"min ({lo}) must be below max ({hi})")


@dataclass(frozen=True)
class MpcSoftening:
    """Per-constraint slack scaling; 0 makes the bound hard."""

    v_id: float = 1.0
    v_iq: float = 1.0
    v_vd: float = 0.0
    v_vq: float = 0.0

    def validate(self):
        for name in ("v_id", "v_iq", "v_vd", "v_vq"):
            _require(getattr(self, name) >= 0.0, f"mpc.softening.{name}", "must be non-negative")


@dataclass(frozen=True)
class MpcSettings:
    ts: float = 500.0e-6          # control sample time (s)
    horizon: int = 10             # prediction intervals
    control_horizon: int = 3      # free input moves
    weight: float = 0.6           # tracking weight (d axis, and q unless weight_q set)
    weight_q: float | None = None
    rho_eps: float = 1.0e5        # slack penalty
    r_move: float = 0.0           # input-move penalty weight
    r_input: float = 0.35         # input-amplitude penalty weight (from steady input)
    bounds: MpcBounds = field(default_factory=MpcBounds)
    softening: MpcSoftening = field(default_factory=MpcSoftening)

    @property
    def weights_dq(self) -> tuple[float, float]:
        return self.weight, self.weight if self.weight_q is None else self.weight_q

    def validate(self):
        _require(self.ts > 0.0, "mpc.ts", "must be strictly positive")
        _require(self.horizon >= 1, "mpc.horizon", "must be at least 1")
        _require(1 <= self.control_horizon <= self.horizon, "mpc.control_horizon",
                 "must satisfy 1 <= control_horizon <= horizon")
        _require(0.0 <= self.weight <= 1.0, "mpc.weight", "must lie within [0, 1]")
        if self.weight_q is not None:
            _require(0.0 <= self.weight_q <= 1.0, "mpc.weight_q", "must lie within [0, 1]")
        _require(self.rho_eps > 0.0, "mpc.rho_eps", "must be strictly positive")
        _require(self.r_move >= 0.0, "mpc.r_move", "must be non-negative")
        _require(self.r_input >= 0.0, "mpc.r_input", "must be non-negative")
        self.bounds.validate()
        self.softening.validate()


@dataclass(frozen=True)
class PiSettings:
    """Benchmark station: inner current PI plus outer dc-voltage/reactive PI.

    Inner gains default to the modulus-optimum rule k_p = l_c/(omega_b*2*tau),
    k_i = r_c/(2*tau) with tau = 2*ts, which places the PI zero exactly on
    the reactor pole omega_b*r_c/l_c; overriding fields win.
    """

    ts: float = 200.0e-6
    kp_inner: float | None = None
    ki_inner: float | None = None
    kp_dc: float = 9.0
    ki_dc: float = 200.0
    kp_q: float = 0.5
    ki_q: float = 60.0
    current_limit: float = 1.2    # outer-loop reference saturation (pu)
    voltage_limit: float = 1.5    # inner-loop output saturation (pu)
    k_aw: float = 1.0             # back-calculation anti-windup gain

    def validate(self):
        _require(self.ts > 0.0, "pi.ts", "must be strictly positive")
        for name in ("kp_dc", "ki_dc", "kp_q", "ki_q", "k_aw"):
            _require(getattr(self, name) >= 0.0, f"pi.{name}", "must be non-negative")
        _require(self.current_limit > 0.0, "pi.current_limit", "must be strictly positive")
        _require(self.voltage_limit > 0.0, "pi.voltage_limit", "must be strictly positive")

    def inner_gains(self, station: StationParams, omega_b: float) -> tuple[float, float]:
        if self.kp_inner is not None and self.ki_inner is not None:
            return self.kp_inner, self.ki_inner
        tau = 2.0 * self.ts
        kp = station.l_c / (omega_b * 2.0 * tau)
        ki = station.r_c / (2.0 * tau)
        if self.kp_inner is not None:
            kp = self.kp_inner
        if self.ki_inner is not None:
            ki = self.ki_inner
        return kp, ki


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    target: str
    value: float


# Reference channels an event may retarget.
EVENT_TARGETS = ("i_ld_ref", "i_lq_ref", "v_dc_ref", "q_ref")


@dataclass(frozen=True)
class Scenario:
    """Timed reference steps for a simulation run.

    ``ref_ramp`` slews each reference change linearly over the given time;
    ramping the current order keeps the power transfer step from ringing the
    dc line.  Zero applies changes instantaneously.
    """

    duration: float = 0.4
    dt: float = 10.0e-6              # plant integration step
    record_decimation: int = 10      # plant steps per recorded sample
    i_ld_ref: float = 0.7
    i_lq_ref: float = 0.0
    v_dc_ref: float = 1.0
    q_ref: float = 0.0
    ref_ramp: float = 0.02           # reference slew duration (s)
    events: tuple[ScenarioEvent, ...] = (
        ScenarioEvent(0.15, "i_ld_ref", 0.5),
        ScenarioEvent(0.25, "i_ld_ref", 0.75),
    )

    def validate(self, dt_max=1.0e-4):
        _require(self.duration > 0.0, "scenario.duration", "must be strictly positive")
        _require(0.0 < self.dt <= dt_max, "scenario.dt", f"must lie within (0, {dt_max}]")
        _require(self.ref_ramp >= 0.0, "scenario.ref_ramp", "must be non-negative")
        _require(self.record_decimation >= 1, "scenario.record_decimation", "must be at least 1")
        last = 0.0
        for k, ev in enumerate(self.events):
            _require(ev.target in EVENT_TARGETS, f"scenario.events[{k}].target",
                     f"must be one of {EVENT_TARGETS}")
            _require(0.0 < ev.time < self.duration, f"scenario.events[{k}].time",
                     "must lie strictly inside (0, duration)")
            _require(ev.time > last or k == 0, f"scenario.events[{k}].time",
                     "event times must be strictly increasing")
            last = ev.time


@dataclass(frozen=True)
class SimSettings:
    dt_max: float = 1.0e-4
    # "modulation": converter voltage applied as index * instantaneous dc
    # voltage between control updates; "voltage": reference applied directly.
    converter_interface: str = "modulation"

    def validate(self):
        _require(self.dt_max > 0.0, "sim.dt_max", "must be strictly positive")
        _require(self.converter_interface in ("modulation", "voltage"),
                 "sim.converter_interface", "must be 'modulation' or 'voltage'")


@dataclass(frozen=True)
class SystemConfig:
    """Fully validated configuration: two stations, dc line, controllers, scenario."""

    base: BaseValues = field(default_factory=BaseValues)
    station1: StationParams = field(default_factory=StationParams)
    station2: StationParams = field(default_factory=StationParams)
    dc_line: DcLineParams = field(default_factory=DcLineParams)
    pll: PllParams = field(default_factory=PllParams)
    damping: DampingParams = field(default_factory=DampingParams)
    mpc: MpcSettings = field(default_factory=MpcSettings)
    pi: PiSettings = field(default_factory=PiSettings)
    scenario: Scenario = field(default_factory=Scenario)
    sim: SimSettings = field(default_factory=SimSettings)

    def validate(self, omega_g_bounds=OMEGA_G_BOUNDS):
        self.base.validate()
        self.station1.validate("station1", omega_g_bounds)
        self.station2.validate("station2", omega_g_bounds)
        self.dc_line.validate()
        self.pll.validate()
        self.damping.validate()
        self.mpc.validate()
        self.pi.validate()
        self.sim.validate()
        self.scenario.validate(self.sim.dt_max)

    def to_dict(self) -> dict:
        return asdict(self)


def effective_grid_impedance(p: StationParams) -> tuple[float, float]:
    """Series lumping of grid branch and transformer: (r_g + r_t, l_g + l_t)."""
    return p.r_g + p.r_t, p.l_g + p.l_t


def dc_line_to_pu(line: DcLineParams, base: BaseValues) -> tuple[float, float]:
    """Total dc-line resistance and reactance in per unit.

    Ohmic totals are length * per-km values divided by the dc base impedance
    v_dc_base**2 / s_base; the inductance additionally carries omega_b so the
    resulting reactance follows the same convention as the ac side.
    """
    z_base = base.z_dc_base
    r_total = line.length_km * line.r_per_km / z_base
    l_total = line.length_km * line.l_per_km * base.omega_b / z_base
    return r_total, l_total


# ---------------------------------------------------------------------------
# Config file I/O.  The file is YAML with one section per dataclass above;
# unknown keys anywhere are an error so typos cannot silently fall back to
# defaults.
# ---------------------------------------------------------------------------

_SECTIONS = {
    "base": BaseValues,
    "station1": StationParams,
    "station2": StationParams,
    "dc_line": DcLineParams,
    "pll": PllParams,
    "damping": DampingParams,
    "mpc": MpcSettings,
    "pi": PiSettings,
    "scenario": Scenario,
    "sim": SimSettings,
}

_NESTED = {
    ("mpc", "bounds"): MpcBounds,
    ("mpc", "softening"): MpcSoftening,
}

_INT_FIELDS = {"horizon", "control_horizon", "record_decimation"}
_STR_FIELDS = {"converter_interface", "target"}
_OPTIONAL_FIELDS = {"kp_inner", "ki_inner", "weight_q"}


def _coerce(section, key, value):
    if key in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
        return value
    if value is None and key in _OPTIONAL_FIELDS:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if key in _INT_FIELDS:
        if int(value) != value:
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping of parameter names to values")
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{name}.{key}: unknown parameter")
        if (name, key) in _NESTED:
            kwargs[key] = _build_section(f"{name}.{key}", _NESTED[(name, key)], value)
        elif name == "scenario" and key == "events":
            kwargs[key] = _build_events(value)
        else:
            kwargs[key] = _coerce(name, key, value)
    return cls(**kwargs)


def _build_events(raw):
    if not isinstance(raw, list):
        raise ConfigError("scenario.events: expected a list")
    events = []
    for k, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError(f"scenario.events[{k}]: expected a mapping")
        extra = set(item) - {"time", "target", "value"}
        if extra:
            raise ConfigError(f"scenario.events[{k}]: unknown keys {sorted(extra)}")
        for needed in ("time", "target", "value"):
            if needed not in item:
                raise ConfigError(f"scenario.events[{k}]: missing '{needed}'")
        events.append(ScenarioEvent(
            time=_coerce(f"scenario.events[{k}]", "time", item["time"]),
            target=_coerce(f"scenario.events[{k}]", "target", item["target"]),
            value=_coerce(f"scenario.events[{k}]", "value", item["value"]),
        ))
    return tuple(events)


def config_from_dict(raw: dict, omega_g_bounds=OMEGA_G_BOUNDS) -> SystemConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping of sections")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"top level: unknown sections {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw[name])
    cfg = SystemConfig(**kwargs)
    cfg.validate(omega_g_bounds)
    return cfg


def load_config(path, omega_g_bounds=OMEGA_G_BOUNDS) -> SystemConfig:
    """Load and validate a configuration file; every bound above is enforced."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            raw = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: cannot parse config file: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_dict(raw, omega_g_bounds)


def save_config(cfg: SystemConfig, path):
    """Serialize a configuration; load_config(save_config(c)) == c."""
    raw = cfg.to_dict()
    raw["scenario"]["events"] = [
        {"time": ev.time, "target": ev.target, "value": ev.value} for ev in cfg.scenario.events
    ]
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(raw, handle, sort_keys=False)


def default_config() -> SystemConfig:
    """Built-in configuration with the reference point-to-point data set."""
    cfg = SystemConfig()
    cfg.validate()
    return cfg
