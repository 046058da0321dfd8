"""Protocol, security and simulator parameters, plus config-file loading.

All time quantities cross module boundaries as integer picoseconds; the
dataclasses below keep the user-facing values in seconds and expose _ps
helpers for the hot paths.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field


class InvalidConfig(ValueError):
    """A configuration value violates a protocol invariant."""

    def __init__(self, field_name: str, reason: str):
        self.field = field_name
        self.reason = reason
        super().__init__(f"{field_name}: {reason}")


@dataclass(frozen=True)
class IntensityLevel:
    """One emission intensity setting (mean photon number per pulse)."""

    label: str  # "signal" | "decoy" | "vacuum"
    value: float


@dataclass(frozen=True)
class ProtocolParams:
    """Encoding and pairing parameters shared by simulation and analysis.

    Defaults are the common working point used throughout the bundled
    fixtures: mu=0.286, nu=0.026, p_mu=0.1008, p_nu=0.5398, 16 phase
    slices, 3 us maximum pairing interval, 4 ns pulse period.
    """

    mu: float = 0.286
    nu: float = 0.026
    p_mu: float = 0.1008
    p_nu: float = 0.5398
    M: int = 16
    t_max: float = 3e-6
    pulse_period: float = 4e-9
    f_ec: float = 1.02
    n_users: int = 3
    # Detector-side bit convention: bit value assigned to the L detector.
    left_detector_bit: int = 0
    # GHZ correlation sign: True = identical Z bits are "correct".
    ghz_matching: bool = True

    @property
    def p_o(self) -> float:
        return 1.0 - self.p_mu - self.p_nu

    @property
    def x_sift_fraction(self) -> float:
        """Fraction of pairs passing the two-window phase filter (2/M)."""
        return 2.0 / self.M

    @property
    def t_max_ps(self) -> int:
        return round(self.t_max * 1e12)

    @property
    def pulse_period_ps(self) -> int:
        return round(self.pulse_period * 1e12)

    def levels(self) -> tuple[IntensityLevel, IntensityLevel, IntensityLevel]:
        return (
            IntensityLevel("signal", self.mu),
            IntensityLevel("decoy", self.nu),
            IntensityLevel("vacuum", 0.0),
        )


@dataclass(frozen=True)
class SecurityParams:
    """Failure probabilities entering the finite-size key length."""

    eps_cor: float = 1e-10
    eps_prime: float = 1e-10
    eps_hat: float = 1e-10
    eps_PA: float = 1e-10
    eps_chernoff: float = 1e-10
    eps_e: float = 1e-10


@dataclass(frozen=True)
class SequencePlan:
    """Burst structure of the emitted pulse train.

    Each sequence is n_ref reference pulses, n_quantum quantum pulses,
    then a recovery gap. Grid slots count every pulse period including
    the recovery region, so slot index and time tag stay proportional.
    """

    n_ref: int = 5000
    n_quantum: int = 39890
    recovery: float = 20e-6
    period: float = 4e-9

    @property
    def recovery_slots(self) -> int:
        return round(self.recovery / self.period)

    @property
    def emitting_slots(self) -> int:
        return self.n_ref + self.n_quantum

    @property
    def grid_slots(self) -> int:
        return self.emitting_slots + self.recovery_slots

    @property
    def period_ps(self) -> int:
        return round(self.period * 1e12)

    @property
    def duration(self) -> float:
        return self.grid_slots * self.period

    def n_quantum_pulses(self, duration_s: float) -> int:
        """Quantum pulses emitted per user over a run of given wall duration."""
        return int(duration_s / self.duration) * self.n_quantum


@dataclass(frozen=True)
class SimulatorParams:
    """Channel, interference and detector model inputs.

    loss_db is the per-user overall transmittance in dB (channel plus
    detector) applied before the explicit 1/4 interferometer splitting of
    the detection model. branch_visibility is the pairwise interference
    visibility of one output branch; the three-photon visibility observed
    after sifting composes from it as branch_visibility**3 / 4.
    """

    loss_db: tuple[float, float, float] = (20.0, 20.0, 20.0)
    f_offset_hz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    f_drift_hz_per_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    delta0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    delta_step: float = 0.0  # interferometer phase random walk, rad/sqrt(s)
    branch_visibility: float = 1.0
    dark_count_prob: float = 4.2e-8
    misalignment: float = 0.01
    reference_intensity: float | None = None  # None -> signal intensity mu
    laser_linewidth_hz: float = 0.0  # hook, unused by the default model
    plan: SequencePlan = field(default_factory=SequencePlan)
    seed: int = 1

    @property
    def eta(self) -> tuple[float, float, float]:
        return tuple(10.0 ** (-db / 10.0) for db in self.loss_db)


def validate_config(params: ProtocolParams, sec: SecurityParams,
                    sim: SimulatorParams | None = None):
    """Check every type invariant; raise InvalidConfig on the first violation.

    Returns the validated (params, sec) or (params, sec, sim) tuple.
    """
    if not (params.mu > params.nu):
        raise InvalidConfig("mu", f"signal intensity must exceed decoy ({params.mu} <= {params.nu})")
    if not (params.nu > 0.0):
        raise InvalidConfig("nu", f"decoy intensity must exceed vacuum ({params.nu} <= 0)")
    for name in ("p_mu", "p_nu"):
        v = getattr(params, name)
        if not (0.0 <= v <= 1.0):
            raise InvalidConfig(name, f"probability {v} outside [0, 1]")
    if params.p_mu + params.p_nu > 1.0:
        raise InvalidConfig("p_mu", f"p_mu + p_nu = {params.p_mu + params.p_nu} > 1")
    if params.M < 2 or params.M % 2 != 0:
        raise InvalidConfig("M", f"slice count must be even and >= 2, got {params.M}")
    if params.t_max <= 0:
        raise InvalidConfig("t_max", "maximum pairing interval must be positive")
    if params.pulse_period <= 0:
        raise InvalidConfig("pulse_period", "pulse period must be positive")
    if params.f_ec < 1.0:
        raise InvalidConfig("f_ec", f"error-correction efficiency {params.f_ec} < 1")
    if params.n_users != 3:
        raise InvalidConfig("n_users", "this release supports exactly 3 users")
    if params.left_detector_bit not in (0, 1):
        raise InvalidConfig("left_detector_bit", "detector bit must be 0 or 1")
    for f in dataclasses.fields(sec):
        v = getattr(sec, f.name)
        if not (0.0 < v < 1.0):
            raise InvalidConfig(f.name, f"failure probability {v} outside (0, 1)")
    if sim is None:
        return params, sec
    for i, eta in enumerate(sim.eta):
        if not (0.0 < eta <= 1.0):
            raise InvalidConfig("loss_db", f"user {i} transmittance {eta} outside (0, 1]")
    if not (0.0 <= sim.branch_visibility <= 1.0):
        raise InvalidConfig("branch_visibility", f"{sim.branch_visibility} outside [0, 1]")
    if not (0.0 <= sim.dark_count_prob < 1.0):
        raise InvalidConfig("dark_count_prob", f"{sim.dark_count_prob} outside [0, 1)")
    if not (0.0 <= sim.misalignment < 1.0):
        raise InvalidConfig("misalignment", f"{sim.misalignment} outside [0, 1)")
    if sim.delta_step < 0:
        raise InvalidConfig("delta_step", "random-walk step must be non-negative")
    return params, sec, sim


def _coerce(raw: str, typ, name: str):
    raw = raw.strip()
    if typ is float:
        return float(raw)
    if typ is int:
        return int(raw)
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(name, f"cannot parse boolean from {raw!r}")
    raise InvalidConfig(name, f"unsupported type {typ}")


def _triple(raw: str, name: str) -> tuple[float, float, float]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise InvalidConfig(name, f"expected 1 or 3 values, got {len(parts)}")
    return tuple(float(p) for p in parts)


_SIM_TRIPLES = {"loss_db", "f_offset_hz", "f_drift_hz_per_s", "delta0"}
_PLAN_KEYS = {"n_ref": int, "n_quantum": int, "recovery": float, "period": float}


def load_config(path) -> tuple[ProtocolParams, SecurityParams, SimulatorParams]:
    """Read a sectioned key/value config file and validate it.

    Sections [protocol], [security] and [simulator] hold keys named
    exactly as the dataclass fields; missing keys keep their defaults,
    unknown keys raise InvalidConfig.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (M vs m)
    read = cp.read(path)
    if not read:
        raise InvalidConfig("config", f"cannot read config file {path}")

    def fill(cls, section, extra_skip=()):
        kwargs = {}
        if not cp.has_section(section):
            return kwargs
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in cp.items(section):
            if key in extra_skip:
                continue
            if key not in fields:
                raise InvalidConfig(key, f"unknown key in [{section}]")
            typ = cls.__dataclass_fields__[key].type
            base = {"float": float, "int": int, "bool": bool}.get(str(typ), None)
            if base is None:
                # annotations are strings under from __future__ import annotations
                if "int" in str(typ):
                    base = int
                elif "bool" in str(typ):
                    base = bool
                else:
                    base = float
            kwargs[key] = _coerce(raw, base, key)
        return kwargs

    params = ProtocolParams(**fill(ProtocolParams, "protocol"))
    sec = SecurityParams(**fill(SecurityParams, "security"))

    sim_kwargs = {}
    plan_kwargs = {}
    if cp.has_section("simulator"):
        sim_fields = {f.name for f in dataclasses.fields(SimulatorParams)}
        for key, raw in cp.items("simulator"):
            if key in _SIM_TRIPLES:
                sim_kwargs[key] = _triple(raw, key)
            elif key in _PLAN_KEYS:
                plan_kwargs[key] = _coerce(raw, _PLAN_KEYS[key], key)
            elif key == "seed":
                sim_kwargs[key] = int(raw)
            elif key == "reference_intensity":
                sim_kwargs[key] = None if raw.strip().lower() == "none" else float(raw)
            elif key in sim_fields:
                sim_kwargs[key] = float(raw)
            else:
                raise InvalidConfig(key, "unknown key in [simulator]")
    if plan_kwargs:
        sim_kwargs["plan"] = SequencePlan(**plan_kwargs)
    sim = SimulatorParams(**sim_kwargs)
    validate_config(params, sec, sim)
    return params, sec, sim
