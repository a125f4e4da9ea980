"""Scenario configs: YAML documents with unit-suffixed fields converted to SI on load.

Lengths are given in µm (``_um``), frequencies in kHz (``_khz``, converted
to angular frequency where the model uses rad/s), times in µs or ms, angles
in degrees or as ``pi``-expressions such as ``pi/2``.
"""
from __future__ import annotations

import ast
import logging
import math
import operator
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .beams import BeamGeometry
from .calibration import solve_velocity
from .dynamics import (ConstantVelocity, PhaseShift, SequenceOptions, StaticPulse, TransferPulse,
                       TransportSegment)
from .errors import ConfigError, TransportGateError
from .measurement import (SHOTS_PARALLEL, SHOTS_RABI, SHOTS_RAMSEY, IonSetup, Scenario, ScanSpec,
                          SpamModel)
from .trap import BERYLLIUM_9, ELEMENTARY_CHARGE, ElectrodeBasis, IonSpecies, load_basis, make_surrogate_basis
from .waveform import (DEFAULT_RAMP, DEFAULT_SAMPLE_RATE, DEFAULT_SLEW, DEFAULT_VMAX,
                       DEFAULT_WINDOW, FilterModel, TrajectoryPlan, apply_filter, plan_trajectory,
                       realized_trajectory, synthesize_waveform)

logger = logging.getLogger(__name__)

AMU = 1.66053906660e-27
UM = 1e-6
KHZ = 2 * np.pi * 1e3

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def parse_expression(value) -> float:
    """Number or arithmetic expression in ``pi`` (``"pi/2"``, ``"3*pi/4"``)."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a number, got {value!r}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {value!r}")

    try:
        return ev(ast.parse(value.strip(), mode="eval"))
    except (SyntaxError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {value!r}: {exc}") from None


def _section(d, name, required=False) -> dict:
    val = d.get(name)
    if val is None:
        if required:
            raise ConfigError(f"missing section {name!r}")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return val


def _check_keys(d: dict, allowed, where: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}; allowed {sorted(allowed)}")


def _num(d: dict, key: str, default=None, where: str = "") -> float:
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing field {key!r}")
        return default
    return parse_expression(d[key])


def _time(d: dict, stem: str, default=None, where: str = "") -> float:
    """``stem_s``, ``stem_ms`` or ``stem_us`` in seconds."""
    found = [(k, s) for k, s in ((f"{stem}_s", 1.0), (f"{stem}_ms", 1e-3), (f"{stem}_us", 1e-6))
             if k in d]
    if len(found) > 1:
        raise ConfigError(f"{where}: give {stem} in one unit only")
    if not found:
        if default is None:
            raise ConfigError(f"{where}: missing {stem}_us / {stem}_ms / {stem}_s")
        return default
    key, scale = found[0]
    return parse_expression(d[key]) * scale


# --- sections -----------------------------------------------------------------

BEAM_FIELDS = ("name", "center_um", "angle_deg", "waist_um", "peak_rabi_khz", "profile_exponent",
               "stark_offset_khz", "misalignment_mdeg", "wavelength_nm")


def parse_beam(d: dict) -> BeamGeometry:
    where = f"beam {d.get('name', '?')}"
    _check_keys(d, BEAM_FIELDS, where)
    kwargs = dict(
        center=_num(d, "center_um", 0.0, where) * UM,
        angle=np.deg2rad(_num(d, "angle_deg", 45.0, where)),
        waist=_num(d, "waist_um", where=where) * UM,
        peak_rabi=_num(d, "peak_rabi_khz", where=where) * KHZ,
        profile_exponent=int(_num(d, "profile_exponent", 2, where)),
        stark_offset=_num(d, "stark_offset_khz", 0.0, where) * KHZ,
        misalignment=np.deg2rad(_num(d, "misalignment_mdeg", 0.0, where) * 1e-3),
        name=str(d.get("name", "")),
    )
    if "wavelength_nm" in d:
        kwargs["wavenumber"] = 2 * np.pi / (_num(d, "wavelength_nm", where=where) * 1e-9)
    try:
        return BeamGeometry(**kwargs)
    except TransportGateError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_spam(d: dict) -> SpamModel:
    _check_keys(d, ("prep_error", "transfer_error", "dark_error", "bright_error", "n_transfers"), "spam")
    kwargs = {k: _num(d, k, where="spam") for k in d if k != "n_transfers"}
    if "n_transfers" in d:
        kwargs["n_transfers"] = int(d["n_transfers"])
    try:
        return SpamModel(**kwargs)
    except TransportGateError as exc:
        raise ConfigError(f"spam: {exc}") from None


def parse_species(d: dict) -> IonSpecies:
    if not d:
        return BERYLLIUM_9
    _check_keys(d, ("name", "mass_amu", "charge"), "species")
    try:
        return IonSpecies(_num(d, "mass_amu", where="species") * AMU,
                          _num(d, "charge", 1.0, "species") * ELEMENTARY_CHARGE, str(d.get("name", "")))
    except TransportGateError as exc:
        raise ConfigError(f"species: {exc}") from None


def parse_basis(d: dict, base_dir: Path) -> ElectrodeBasis:
    if not d:
        d = {"surrogate": {}}
    _check_keys(d, ("surrogate", "file", "derivative_file", "max_channels"), "basis")
    if "file" in d:
        path = base_dir / d["file"]
        deriv = base_dir / d["derivative_file"] if d.get("derivative_file") else None
        try:
            return load_basis(path, deriv, max_channels=d.get("max_channels"))
        except (OSError, TransportGateError) as exc:
            raise ConfigError(f"basis: {exc}") from None
    s = d.get("surrogate") or {}
    _check_keys(s, ("n_electrodes", "pitch_um", "width_um", "half_span_um", "step_um"), "basis.surrogate")
    try:
        return make_surrogate_basis(int(s.get("n_electrodes", 30)), _num(s, "pitch_um", 120.0) * UM,
                                    _num(s, "width_um", 80.0) * UM, _num(s, "half_span_um", 2000.0) * UM,
                                    grid_step=_num(s, "step_um", 1.0) * UM,
                                    max_channels=d.get("max_channels"))
    except TransportGateError as exc:
        raise ConfigError(f"basis: {exc}") from None


@dataclass
class SynthesisSettings:
    sample_rate: float = DEFAULT_SAMPLE_RATE
    vmax: float = DEFAULT_VMAX
    slew: float = DEFAULT_SLEW
    omega: float = 2 * np.pi * 2e6
    depth: float = 0.1  # eV
    ramp: float = DEFAULT_RAMP
    window: float = DEFAULT_WINDOW


def parse_synthesis(d: dict) -> SynthesisSettings:
    where = "synthesis"
    _check_keys(d, ("sample_rate_mhz", "vmax", "slew_v_per_us", "omega_mhz", "depth_ev", "ramp_us",
                    "window_um"), where)
    s = SynthesisSettings()
    return SynthesisSettings(
        sample_rate=_num(d, "sample_rate_mhz", s.sample_rate / 1e6, where) * 1e6,
        vmax=_num(d, "vmax", s.vmax, where),
        slew=_num(d, "slew_v_per_us", s.slew / 1e6, where) * 1e6,
        omega=_num(d, "omega_mhz", s.omega / (2 * np.pi * 1e6), where) * 2 * np.pi * 1e6,
        depth=_num(d, "depth_ev", s.depth, where),
        ramp=_num(d, "ramp_us", s.ramp / 1e-6, where) * 1e-6,
        window=_num(d, "window_um", s.window / UM, where) * UM,
    )


def parse_filter(d: dict) -> FilterModel | None:
    if not d:
        return None
    _check_keys(d, ("cutoff_khz", "order", "enabled"), "filter")
    if not d.get("enabled", True):
        return None
    try:
        return FilterModel(_num(d, "cutoff_khz", where="filter") * 1e3, int(d.get("order", 1)))
    except TransportGateError as exc:
        raise ConfigError(f"filter: {exc}") from None


# --- the document -------------------------------------------------------------

@dataclass
class ScanConfig:
    name: str
    spec: ScanSpec
    fit: str | None = None


@dataclass
class ScenarioConfig:
    path: Path | None
    raw: dict
    source: bytes
    seed: int
    beams: dict
    spam: SpamModel
    options: SequenceOptions
    species: IonSpecies
    synthesis: SynthesisSettings
    filter: FilterModel | None
    scans: list = field(default_factory=list)
    _basis: ElectrodeBasis | None = None
    _scenario: Scenario | None = None

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    @property
    def basis(self) -> ElectrodeBasis:
        if self._basis is None:
            self._basis = parse_basis(_section(self.raw, "basis"), self.base_dir)
        return self._basis

    def beam(self, name: str) -> BeamGeometry:
        try:
            return self.beams[name]
        except KeyError:
            raise ConfigError(f"unknown beam {name!r}; defined: {sorted(self.beams)}") from None

    def scenario(self, seed: int | None = None) -> Scenario:
        if self._scenario is None:
            ions = self.raw.get("ions")
            if not isinstance(ions, list) or not ions:
                raise ConfigError("'ions' must be a non-empty list")
            setups = tuple(build_ion(d, self, k) for k, d in enumerate(ions))
            self._scenario = Scenario(setups, self.spam, self.options, self.seed)
        return self._scenario if seed is None else replace(self._scenario, seed=seed)


def _parse_scan(d: dict, k: int) -> ScanConfig:
    where = f"scan {k}"
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    var = d.get("variable")
    common = ("name", "variable", "points", "shots", "fit", "target")
    n = int(_num(d, "points", where=where))
    if n < 1:
        raise ConfigError(f"{where}: points must be positive")
    if var == "t_off":
        _check_keys(d, common + tuple(f"{s}_{u}" for s in ("start", "stop") for u in ("s", "ms", "us")), where)
        grid = np.linspace(_time(d, "start", where=where), _time(d, "stop", where=where), n)
        shots = SHOTS_RABI
    elif var == "phase":
        _check_keys(d, common + ("start", "stop"), where)
        grid = np.linspace(_num(d, "start", where=where), _num(d, "stop", where=where), n)
        shots = SHOTS_RAMSEY
    elif var == "frequency":
        _check_keys(d, common + ("start_khz", "stop_khz"), where)
        grid = np.linspace(_num(d, "start_khz", where=where), _num(d, "stop_khz", where=where), n) * 1e3
        shots = SHOTS_PARALLEL
    else:
        raise ConfigError(f"{where}: variable must be t_off, phase or frequency, got {var!r}")
    shots = int(_num(d, "shots", shots, where))
    if shots < 1:
        raise ConfigError(f"{where}: shots must be positive")
    target = d.get("target")
    return ScanConfig(str(d.get("name", f"{var}{k}")),
                      ScanSpec(var, grid, shots, None if target is None else int(target), k),
                      d.get("fit"))


def parse_config(text: str | bytes, path: Path | None = None) -> ScenarioConfig:
    source = text.encode() if isinstance(text, str) else text
    try:
        raw = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    _check_keys(raw, ("name", "seed", "beams", "spam", "options", "species", "basis", "synthesis",
                      "filter", "ions", "scans", "wells", "doppler", "calibrate"), "config")
    beams = {}
    for k, b in enumerate(raw.get("beams") or []):
        if not isinstance(b, dict):
            raise ConfigError(f"beam {k} must be a mapping")
        beam = parse_beam(b)
        name = beam.name or f"beam{k}"
        if name in beams:
            raise ConfigError(f"duplicate beam name {name!r}")
        beams[name] = beam
    opts = _section(raw, "options")
    _check_keys(opts, ("step_fraction", "base_detuning_khz", "max_step_us"), "options")
    options = SequenceOptions(
        base_detuning=_num(opts, "base_detuning_khz", 0.0, "options") * KHZ,
        step_fraction=_num(opts, "step_fraction", 0.01, "options"),
        max_step=_num(opts, "max_step_us", where="options") * 1e-6 if "max_step_us" in opts else None)
    scans = [_parse_scan(d, k) for k, d in enumerate(raw.get("scans") or [])]
    return ScenarioConfig(path, raw, source, int(raw.get("seed", 0)), beams,
                          parse_spam(_section(raw, "spam")), options,
                          parse_species(_section(raw, "species")),
                          parse_synthesis(_section(raw, "synthesis")),
                          parse_filter(_section(raw, "filter")), scans)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(data, path)


# --- sequences ----------------------------------------------------------------

def _velocity(d: dict, cfg: ScenarioConfig, beams, where: str) -> float:
    """Speed in m/s, either given or calibrated for a rotation angle."""
    v = d.get("velocity")
    if isinstance(v, dict):
        _check_keys(v, ("calibrate", "beam"), f"{where}.velocity")
        theta = parse_expression(v["calibrate"])
        beam = cfg.beam(v["beam"]) if "beam" in v else beams[0]
        report = solve_velocity(beam, theta)
        logger.info("%s: calibrated %.6g m/s for theta = %.6g", where, report.value, theta)
        return report.value
    if v is None:
        raise ConfigError(f"{where}: missing velocity")
    speed = abs(parse_expression(v))
    if speed == 0:
        raise ConfigError(f"{where}: velocity must be non-zero")
    return speed


def _transport(d: dict, cfg: ScenarioConfig, where: str) -> TransportSegment:
    _check_keys(d, ("start_um", "end_um", "velocity", "beams", "t_off_us", "phase", "trajectory"), where)
    names = d.get("beams") or list(cfg.beams)
    if not names:
        raise ConfigError(f"{where}: no beams defined")
    beams = tuple(cfg.beam(n) for n in names)
    z0 = _num(d, "start_um", where=where) * UM
    z1 = _num(d, "end_um", where=where) * UM
    if z0 == z1:
        raise ConfigError(f"{where}: start and end coincide")
    speed = _velocity(d, cfg, beams, where)
    v = speed if z1 > z0 else -speed
    kind = d.get("trajectory", "constant")
    if kind == "constant":
        traj = ConstantVelocity(z0, z1, v)
    elif kind in ("synthesized", "filtered"):
        if kind == "filtered" and cfg.filter is None:
            raise ConfigError(f"{where}: filtered trajectory needs a 'filter' section")
        s = cfg.synthesis
        try:
            plan = plan_trajectory(z0, z1, v, s.omega, s.depth, s.sample_rate, s.ramp, s.window)
        except TransportGateError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        wf = synthesize_waveform(cfg.basis, plan, cfg.species, s.vmax, s.slew)
        if kind == "filtered":
            wf = apply_filter(wf, cfg.filter)
        traj = realized_trajectory(cfg.basis, wf, cfg.species, z0)
    else:
        raise ConfigError(f"{where}: trajectory must be constant, synthesized or filtered")
    t_off = _time(d, "t_off", -1.0, where)
    return TransportSegment(traj, beams, None if t_off < 0 else t_off,
                            parse_expression(d.get("phase", 0.0)))


def build_element(d, cfg: ScenarioConfig, where: str):
    if not isinstance(d, dict) or len(d) != 1:
        raise ConfigError(f"{where}: each element is a single-key mapping (transport/pulse/phase/transfer)")
    (tag, body), = d.items()
    body = body or {}
    if tag == "transport":
        return _transport(body, cfg, where)
    if tag == "pulse":
        _check_keys(body, ("theta", "phase", "detuning_khz", "rabi_khz"), where)
        return StaticPulse(parse_expression(body.get("theta", "pi")),
                           parse_expression(body.get("phase", 0.0)),
                           _num(body, "detuning_khz", 0.0, where) * KHZ,
                           _num(body, "rabi_khz", 50.0, where) * KHZ)
    if tag == "phase":
        if isinstance(body, dict):
            _check_keys(body, ("phi",), where)
            return PhaseShift(parse_expression(body.get("phi", 0.0)))
        return PhaseShift(parse_expression(body))
    if tag == "transfer":
        _check_keys(body, ("infidelity", "affects_contrast"), where)
        inf = body.get("infidelity")
        return TransferPulse(None if inf is None else parse_expression(inf),
                             bool(body.get("affects_contrast", True)))
    raise ConfigError(f"{where}: unknown element type {tag!r}")


def build_ion(d: dict, cfg: ScenarioConfig, k: int) -> IonSetup:
    name = str(d.get("name", f"ion{k + 1}"))
    where = f"ion {name}"
    _check_keys(d, ("name", "sequence", "transport"), where)
    if "sequence" in d:
        seq = d["sequence"]
        if not isinstance(seq, list) or not seq:
            raise ConfigError(f"{where}: sequence must be a non-empty list")
        elements = tuple(build_element(e, cfg, f"{where} element {i}") for i, e in enumerate(seq))
    elif "transport" in d:
        # shorthand: transfer in, one transport gate, transfer out
        elements = (TransferPulse(), _transport(d["transport"], cfg, where), TransferPulse())
    else:
        raise ConfigError(f"{where}: needs 'sequence' or 'transport'")
    return IonSetup(name, elements)


def well_plan(cfg: ScenarioConfig) -> TrajectoryPlan:
    """Simultaneous single-well plans from the ``wells`` list."""
    wells = cfg.raw.get("wells")
    if not isinstance(wells, list) or not wells:
        raise ConfigError("'wells' must be a non-empty list")
    s = cfg.synthesis
    plans = []
    for k, w in enumerate(wells):
        where = f"well {k}"
        _check_keys(w, ("start_um", "end_um", "velocity", "omega_mhz", "depth_ev"), where)
        z0 = _num(w, "start_um", where=where) * UM
        z1 = _num(w, "end_um", where=where) * UM
        speed = abs(_num(w, "velocity", where=where))
        omega = _num(w, "omega_mhz", s.omega / (2e6 * np.pi), where) * 2e6 * np.pi
        depth = _num(w, "depth_ev", s.depth, where)
        try:
            plans.append(plan_trajectory(z0, z1, speed if z1 >= z0 else -speed, omega, depth,
                                         s.sample_rate, s.ramp, s.window))
        except TransportGateError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return plans[0] if len(plans) == 1 else TrajectoryPlan.combine(plans, s.window)


@dataclass
class DopplerSettings:
    beam: BeamGeometry
    speed: float
    frequencies: np.ndarray  # Hz
    theta: float | None
    shots: int


def doppler_settings(cfg: ScenarioConfig) -> DopplerSettings:
    d = _section(cfg.raw, "doppler", required=True)
    where = "doppler"
    _check_keys(d, ("beam", "velocity", "theta", "start_khz", "stop_khz", "points", "shots"), where)
    if not cfg.beams:
        raise ConfigError("doppler: no beams defined")
    beam = cfg.beam(d.get("beam", next(iter(cfg.beams))))
    n = int(_num(d, "points", 101, where))
    if n < 5:
        raise ConfigError("doppler: need at least 5 points")
    grid = np.linspace(_num(d, "start_khz", where=where), _num(d, "stop_khz", where=where), n) * 1e3
    speed = abs(_num(d, "velocity", where=where))
    if speed == 0:
        raise ConfigError("doppler: velocity must be non-zero")
    theta = _num(d, "theta", where=where) if "theta" in d else None
    return DopplerSettings(beam, speed, grid, theta, int(_num(d, "shots", SHOTS_PARALLEL, where)))
