"""Scenario files: INI text declaring one open- or closed-loop experiment.

Example::

    [scenario]
    mode = closed_loop            ; or open_loop
    seed = 0

    [schedule]
    roads = DSD                   ; D/W/S code, or one "b1,b2,b3" surface
    duration = 12.0               ; split evenly over the segments
    trigger = time                ; or distance

    [profile]
    kind = pilot_step             ; sinusoid | constant | pilot_step
    torque = 10000
    ramp = 0.5

    [controller]
    setpoint = mlp                ; mlp | oracle | fixed
    fixed_setpoint = 0.1

    [estimator]
    model = desk.mdl              ; relative to the scenario file
    s_forwards = 500

Optional ``[aircraft]`` and ``[sim]`` sections override the dataclass
defaults field by field. Sinusoid ``amplitude`` and ``bias`` default to
``auto`` (tuned by a pre-run so slip covers 0.01..0.4).
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from slipnet import harness
from slipnet.control import ControllerConfig
from slipnet.dynamics import AircraftParams
from slipnet.exceptions import DomainError, ScenarioError
from slipnet.friction import parse_road
from slipnet.net import UncertaintyConfig, load_model

MODES = ("open_loop", "closed_loop")
PROFILE_KINDS = ("sinusoid", "constant", "pilot_step")
_SECTIONS = ("scenario", "aircraft", "schedule", "profile", "controller", "estimator", "sim")


@dataclass
class Scenario:
    name: str
    mode: str
    schedule: harness.RoadSchedule
    profile: dict
    aircraft: AircraftParams = field(default_factory=AircraftParams)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    sim: harness.SimConfig = field(default_factory=harness.SimConfig)
    setpoint: str = "mlp"
    fixed_setpoint: float = 0.1
    model_path: Path | None = None
    s_forwards: int = 500
    sigma_obs: float | None = None
    seed: int = 0


def _line_of(text: str, section: str, key: str | None = None) -> int:
    """1-based line of ``[section]`` or of ``key`` inside it; 0 if not found."""
    in_section = False
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            in_section = m.group(1).strip().lower() == section
            if in_section and key is None:
                return no
            continue
        if in_section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line, re.IGNORECASE):
            return no
    return 0


class _Reader:
    def __init__(self, text: str, cp: configparser.ConfigParser):
        self.text = text
        self.cp = cp

    def fail(self, section, key, msg):
        raise ScenarioError(msg, line=_line_of(self.text, section, key))

    def get(self, section, key, default=None, convert=str):
        if not self.cp.has_option(section, key):
            if default is ...:
                self.fail(section, None, f"missing required key [{section}] {key}")
            return default
        raw = self.cp.get(section, key).strip()
        try:
            return convert(raw)
        except (ValueError, DomainError) as exc:
            self.fail(section, key, f"[{section}] {key} = {raw!r}: {exc}")

    def dataclass_overrides(self, section, cls):
        if not self.cp.has_section(section):
            return cls()
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key in self.cp.options(section):
            if key not in names:
                self.fail(section, key, f"unknown key [{section}] {key}")
            conv = int if names[key].type in ("int",) else float
            kwargs[key] = self.get(section, key, convert=conv)
        try:
            return cls(**kwargs)
        except (ValueError, DomainError) as exc:
            self.fail(section, None, f"[{section}]: {exc}")


def parse_scenario(text: str, name: str = "scenario", base_dir: Path | None = None) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # aircraft fields are case sensitive (M, J, K_D)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario: {exc.message if hasattr(exc, 'message') else exc}",
                            line=getattr(exc, "lineno", 0)) from None
    rd = _Reader(text, cp)
    for sec in cp.sections():
        if sec not in _SECTIONS:
            rd.fail(sec, None, f"unknown section [{sec}]")
    for sec in ("scenario", "schedule", "profile"):
        if not cp.has_section(sec):
            raise ScenarioError(f"missing section [{sec}]", line=0)

    mode = rd.get("scenario", "mode", ...)
    if mode not in MODES:
        rd.fail("scenario", "mode", f"mode must be one of {MODES}, got {mode!r}")
    seed = rd.get("scenario", "seed", 0, int)

    roads = rd.get("schedule", "roads", ...)
    trigger = rd.get("schedule", "trigger", "time")
    duration = rd.get("schedule", "duration", 12.0, float)
    try:
        if re.fullmatch(r"[DWSdws]+", roads):
            schedule = harness.RoadSchedule.from_code(roads, duration, trigger)
        else:
            schedule = harness.RoadSchedule.fixed(parse_road(roads))
    except DomainError as exc:
        rd.fail("schedule", "roads", f"[schedule] roads = {roads!r}: {exc}")

    kind = rd.get("profile", "kind", ...)
    if kind not in PROFILE_KINDS:
        rd.fail("profile", "kind", f"profile kind must be one of {PROFILE_KINDS}, got {kind!r}")
    profile = {"kind": kind}
    for key in cp.options("profile"):
        if key == "kind":
            continue
        val = rd.get("profile", key)
        profile[key] = val if val == "auto" else rd.get("profile", key, convert=float)

    aircraft = rd.dataclass_overrides("aircraft", AircraftParams)
    sim = rd.dataclass_overrides("sim", harness.SimConfig)
    ctrl_fields = {f.name for f in dataclasses.fields(ControllerConfig)}
    controller_kwargs = {}
    setpoint, fixed_setpoint = "mlp", 0.1
    if cp.has_section("controller"):
        for key in cp.options("controller"):
            if key == "setpoint":
                setpoint = rd.get("controller", key)
                if setpoint not in harness.SETPOINT_SOURCES:
                    rd.fail("controller", key, f"setpoint must be one of {harness.SETPOINT_SOURCES}")
            elif key == "fixed_setpoint":
                fixed_setpoint = rd.get("controller", key, convert=float)
            elif key in ctrl_fields:
                controller_kwargs[key] = rd.get("controller", key, convert=float)
            else:
                rd.fail("controller", key, f"unknown key [controller] {key}")
    try:
        controller = ControllerConfig(**controller_kwargs)
    except DomainError as exc:
        rd.fail("controller", None, f"[controller]: {exc}")

    model_path = rd.get("estimator", "model", None)
    if model_path is not None:
        model_path = Path(model_path)
        if not model_path.is_absolute() and base_dir is not None:
            model_path = base_dir / model_path
    scen = Scenario(
        name=name,
        mode=mode,
        schedule=schedule,
        profile=profile,
        aircraft=aircraft,
        controller=controller,
        sim=sim,
        setpoint=setpoint,
        fixed_setpoint=fixed_setpoint,
        model_path=model_path,
        s_forwards=rd.get("estimator", "s_forwards", 500, int),
        sigma_obs=rd.get("estimator", "sigma_obs", None, float),
        seed=seed,
    )
    if scen.mode == "closed_loop" and scen.profile["kind"] == "sinusoid":
        rd.fail("profile", "kind", "closed-loop runs need a constant or pilot_step pilot demand")
    return scen


def bundled_names() -> list[str]:
    root = resources.files("slipnet") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def road_code_scenario(code: str) -> str:
    """Closed-loop live-estimate scenario text for a road code such as ``"SWD"``."""
    return (
        "[scenario]\nmode = closed_loop\nseed = 0\n\n"
        f"[schedule]\nroads = {code.upper()}\nduration = 12.0\n\n"
        "[profile]\nkind = pilot_step\ntorque = 10000\nramp = 0.5\n\n"
        "[controller]\nsetpoint = mlp\n"
    )


def load_scenario(ref: str) -> Scenario:
    """Read a scenario from a path, a bundled name, or a road code such as ``"DSD"``."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(), path.stem, path.parent)
    if ref in bundled_names():
        text = (resources.files("slipnet") / "scenarios" / f"{ref}.ini").read_text()
        return parse_scenario(text, ref, Path.cwd())
    if ref.upper() in harness.FIXED_ROADS + harness.TRANSITION_CODES:
        return parse_scenario(road_code_scenario(ref), ref.upper(), Path.cwd())
    raise ScenarioError(f"no scenario file, bundled scenario or road code named {ref!r}", line=0)


def _profile(scen: Scenario):
    p = dict(scen.profile)
    kind = p.pop("kind")
    try:
        if kind == "sinusoid":
            freq = p.get("frequency", 0.5)
            if p.get("amplitude", "auto") == "auto" or p.get("bias", "auto") == "auto":
                tuned = harness.tune_sinusoid(
                    scen.schedule.segments[0].surface, scen.aircraft, frequency=freq, v0=scen.sim.v0
                )
                amp = tuned.amplitude if p.get("amplitude", "auto") == "auto" else p["amplitude"]
                bias = tuned.bias if p.get("bias", "auto") == "auto" else p["bias"]
                return harness.Sinusoid(amp, bias, freq)
            return harness.Sinusoid(p["amplitude"], p["bias"], freq)
        if kind == "constant":
            return harness.Constant(p["torque"])
        return harness.PilotStep(p["torque"], p.get("ramp", 0.5), p.get("start", 0.0))
    except KeyError as exc:
        raise ScenarioError(f"[profile] {kind} needs key {exc.args[0]}", line=0) from None


def run_scenario(scen: Scenario, model_path=None, keep_windows: bool = False) -> harness.ExperimentResult:
    path = Path(model_path) if model_path is not None else scen.model_path
    estimator = None
    if path is not None:
        model, header = load_model(path, return_header=True)
        sigma = scen.sigma_obs if scen.sigma_obs is not None else float(header.get("sigma_obs", 0.0) or 0.0)
        estimator = harness.MCDropoutEstimator(model, UncertaintyConfig(scen.s_forwards, sigma, scen.seed))
    if estimator is not None and model.layer_dims[0] != 2 * scen.sim.window:
        raise DomainError(f"model expects {model.layer_dims[0] // 2} pairs, scenario window is {scen.sim.window}")
    profile = _profile(scen)
    if scen.mode == "open_loop":
        return harness.run_open_loop(scen.schedule, profile, scen.aircraft, estimator, scen.sim, keep_windows)
    if scen.setpoint == "mlp" and estimator is None:
        raise ScenarioError("closed loop with setpoint = mlp needs a model ([estimator] model or --model)", line=0)
    return harness.run_closed_loop(
        scen.schedule, scen.setpoint, profile, scen.aircraft, estimator, scen.controller, scen.sim,
        scen.fixed_setpoint, keep_windows,
    )


def _run_one(args):
    scen, model_path = args
    return run_scenario(scen, model_path)


def run_batch(scenarios, model_path=None, workers: int = 1) -> list[harness.ExperimentResult]:
    """Run independent scenarios, in worker processes when ``workers > 1``.

    Each run seeds its own streams from its scenario, so results do not
    depend on ``workers`` or on completion order.
    """
    jobs = [(s, model_path) for s in scenarios]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
