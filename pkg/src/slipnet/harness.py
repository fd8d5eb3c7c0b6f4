"""Scenario execution: open-loop sweeps, closed-loop runs and their metrics.

The plant is integrated at ``dt`` (1 ms). Every controller tick (5 ms) the
newest inverted (slip, friction) pair is appended to a sliding window of the
last ``n`` pairs; once the window is full and the wheel is actually slipping,
the estimator is queried with MC dropout. Both wheels see the same surface
and torque, so the left wheel stands for both.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from slipnet import dynamics
from slipnet.control import ControllerConfig, ControllerState, control_step
from slipnet.dynamics import AircraftParams, AircraftState, StreamingInverter
from slipnet.exceptions import DomainError, ScenarioError
from slipnet.friction import BurckhardtParams, ReferenceRoad, mu, optimal_point_closed_form
from slipnet.net import MlpModel, UncertaintyConfig, mc_moments

TRACE_COLUMNS = (
    "t", "v", "omega_L", "omega_R", "lambda_L", "mu_L", "T_b_L", "F_z",
    "sigma_norm", "lambda_star_hat", "lambda_star_true",
)
LOW_SLIP_MAX = 0.08
HIGH_SLIP_MIN = 0.1

FIXED_ROADS = ("S", "W", "D")
TRANSITION_CODES = ("SDS", "SWS", "SWD", "DW", "WSW", "WDW", "WDS", "WD", "DSD", "DWD", "DSW", "SD")


# --- road schedules --------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    surface: BurckhardtParams
    start: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class RoadSchedule:
    """Ordered surfaces; ``trigger`` says whether ``start`` is seconds or metres."""

    segments: tuple[Segment, ...]
    trigger: str = "time"

    def __post_init__(self):
        if not self.segments:
            raise DomainError("schedule needs at least one segment")
        if self.segments[0].start != 0.0:
            raise DomainError("first segment must start at 0")
        starts = [s.start for s in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise DomainError("segment starts must be strictly increasing")
        if self.trigger not in ("time", "distance"):
            raise DomainError("trigger must be 'time' or 'distance'")

    @classmethod
    def from_code(cls, code: str, duration: float = 12.0, trigger: str = "time") -> "RoadSchedule":
        """``"DSD"`` -> Dry, Snow, Dry, each holding an equal share of ``duration``.

        With ``trigger="distance"``, ``duration`` is read as metres.
        """
        code = code.strip().upper()
        if not code or any(c not in "DWS" for c in code):
            raise DomainError(f"road code {code!r} must use only D, W, S")
        if not duration > 0:
            raise DomainError("duration must be positive")
        length = duration / len(code)
        segs = []
        for i, c in enumerate(code):
            road = ReferenceRoad.from_name(c)
            segs.append(Segment(road.params, i * length, road.name.title()))
        return cls(tuple(segs), trigger)

    @classmethod
    def fixed(cls, surface: BurckhardtParams | str) -> "RoadSchedule":
        if isinstance(surface, str):
            road = ReferenceRoad.from_name(surface)
            return cls((Segment(road.params, 0.0, road.name.title()),))
        return cls((Segment(surface, 0.0),))

    def index_at(self, t: float, x: float) -> int:
        key = t if self.trigger == "time" else x
        idx = 0
        for i, seg in enumerate(self.segments):
            if key >= seg.start:
                idx = i
        return idx

    def surface_at(self, t: float, x: float) -> BurckhardtParams:
        return self.segments[self.index_at(t, x)].surface

    def transition_times(self, trace_t: np.ndarray, trace_x: np.ndarray) -> list[float]:
        key = trace_t if self.trigger == "time" else trace_x
        out = []
        for seg in self.segments[1:]:
            hit = np.nonzero(key >= seg.start)[0]
            if hit.size:
                out.append(float(trace_t[hit[0]]))
        return out


# --- torque profiles -------------------------------------------------------

@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    bias: float
    frequency: float = 0.5

    def __call__(self, t: float) -> float:
        return max(self.bias + self.amplitude * math.sin(2 * math.pi * self.frequency * t), 0.0)


@dataclass(frozen=True)
class Constant:
    torque: float

    def __call__(self, t: float) -> float:
        return max(self.torque, 0.0)


@dataclass(frozen=True)
class PilotStep:
    torque: float
    ramp: float = 0.5
    start: float = 0.0

    def __call__(self, t: float) -> float:
        if t < self.start:
            return 0.0
        if self.ramp <= 0:
            return max(self.torque, 0.0)
        return max(self.torque * min((t - self.start) / self.ramp, 1.0), 0.0)


def tune_sinusoid(
    surface: BurckhardtParams,
    params: AircraftParams = AircraftParams(),
    low_slip: float = 0.01,
    high_slip: float = 0.4,
    frequency: float = 0.5,
    v0: float | None = None,
    duration: float = 6.0,
    max_iter: int = 8,
) -> Sinusoid:
    """Bias and amplitude making the open-loop slip cover ``[low_slip, high_slip]``.

    The trough is the quasi-static torque holding ``low_slip`` at touchdown
    load; the crest starts 10% above the peak tire torque at full load and is
    raised until a short pre-run actually reaches ``high_slip``.
    """
    v0 = params.v_touchdown if v0 is None else v0
    star = optimal_point_closed_form(surface)
    t_low = params.r * mu(surface, low_slip) * dynamics.vertical_load(params, v0)
    t_high = 1.1 * params.r * star.mu_star * params.static_load
    for _ in range(max_iter):
        profile = Sinusoid((t_high - t_low) / 2, (t_high + t_low) / 2, frequency)
        lam = _pre_run(profile, surface, params, v0, duration)
        if lam.max() >= high_slip and lam.min() <= low_slip:
            return profile
        if lam.max() < high_slip:
            t_high *= 1.15
        if lam.min() > low_slip:
            t_low *= 0.8
    raise DomainError("could not tune sinusoid to cover the requested slip interval")


def _pre_run(profile, surface, params, v0, duration, dt=1e-3):
    state = AircraftState.touchdown(params, v0)
    lams = []
    for k in range(int(duration / dt)):
        T = profile(state.t)
        state = dynamics.step(state, (T, T), params, surface, dt)
        if state.v <= dynamics.V_STOP:
            break
        if k % 5 == 0:
            lams.append(dynamics.slip(state.v, state.omega_L, params.r))
    return np.array(lams)


# --- estimator adapter -----------------------------------------------------

class MCDropoutEstimator:
    """Per-tick MC-dropout queries against a fitted :class:`MlpModel`."""

    def __init__(self, model: MlpModel, config: UncertaintyConfig = UncertaintyConfig()):
        self.model = model
        self.config = config
        self.rng = np.random.default_rng([int(config.seed), 4])

    @classmethod
    def from_estimator(cls, est, seed: int = 0, s_forwards: int | None = None):
        cfg = UncertaintyConfig(s_forwards or est.s_forwards, est.sigma_obs_, seed)
        return cls(est.model_, cfg)

    def __call__(self, x: np.ndarray) -> tuple[float, float]:
        mean, var = mc_moments(self.model, x, self.config.s_forwards, self.rng)
        return float(mean[0]), float(self.config.sigma_obs ** 2 + var[0])


# --- experiments -----------------------------------------------------------

@dataclass
class SimConfig:
    dt: float = 1e-3
    tick: float = 5e-3
    v0: float = 70.0
    v_stop: float = dynamics.V_STOP
    t_max: float = 120.0
    window: int = 15
    inversion_tau: float = 0.0
    min_excitation: float = 0.002

    def __post_init__(self):
        ratio = self.tick / self.dt
        if self.tick < self.dt or abs(ratio - round(ratio)) > 1e-9:
            raise DomainError("controller tick must be an integer multiple of the integrator step")
        if self.window < 2:
            raise DomainError("window must hold at least two pairs")


@dataclass
class ExperimentResult:
    trace: dict[str, np.ndarray]
    metrics: dict[str, float]
    schedule: RoadSchedule
    window_pairs: list = field(default_factory=list, repr=False)

    def write_csv(self, path_or_buf) -> None:
        write_trace_csv(self.trace, path_or_buf)


def _run(
    schedule: RoadSchedule,
    params: AircraftParams,
    sim: SimConfig,
    torque_fn: Callable,
    estimator: Callable | None,
    keep_windows: bool = False,
) -> ExperimentResult:
    ticks_per = int(round(sim.tick / sim.dt))
    state = AircraftState.touchdown(params, sim.v0)
    inverter = StreamingInverter(params, sim.inversion_tau)
    window: deque = deque(maxlen=sim.window)
    rows = []
    windows = []
    x = 0.0
    T_b = 0.0
    surface = schedule.surface_at(0.0, 0.0)
    inverter.push(dynamics.measure(state, T_b, params, surface))
    latest = None
    max_steps = int(round(sim.t_max / sim.dt))

    for k in range(max_steps):
        surface = schedule.surface_at(state.t, x)
        if k % ticks_per == 0:
            lam = dynamics.slip(state.v, state.omega_L, params.r)
            if latest is not None:
                window.append(latest)
            est, var = math.nan, math.nan
            if estimator is not None and len(window) == sim.window:
                pairs = np.array(window)
                if pairs[:, 0].max() >= sim.min_excitation:
                    est, var = estimator(pairs.reshape(-1))
            T_b = torque_fn(state, lam, est, var, x)
            F_z = dynamics.vertical_load(params, state.v)
            sigma_norm = math.sqrt(var) / est if est > 1e-6 else math.nan
            rows.append((
                state.t, state.v, state.omega_L, state.omega_R, lam, mu(surface, lam), T_b, F_z,
                sigma_norm, est, optimal_point_closed_form(surface).lambda_star,
            ))
            if keep_windows:
                windows.append(np.array(window) if len(window) == sim.window else None)
        v_before = state.v
        state = dynamics.step(state, (T_b, T_b), params, surface, sim.dt)
        x += 0.5 * (v_before + state.v) * sim.dt
        if state.v <= sim.v_stop:
            break
        pair = inverter.push(dynamics.measure(state, T_b, params, schedule.surface_at(state.t, x)))
        if pair is not None:
            latest = pair

    trace = {name: np.array([r[i] for r in rows]) for i, name in enumerate(TRACE_COLUMNS)}
    return ExperimentResult(trace, compute_metrics(trace, schedule, sim.window), schedule, windows)


def run_open_loop(
    schedule: RoadSchedule,
    torque_profile: Callable[[float], float],
    params: AircraftParams = AircraftParams(),
    estimator: Callable | None = None,
    sim: SimConfig = SimConfig(),
    keep_windows: bool = False,
) -> ExperimentResult:
    def torque_fn(state, lam, est, var, x):
        return torque_profile(state.t)

    return _run(schedule, params, sim, torque_fn, estimator, keep_windows)


SETPOINT_SOURCES = ("fixed", "mlp", "oracle")


def run_closed_loop(
    schedule: RoadSchedule,
    setpoint_source: str,
    pilot: Callable[[float], float],
    params: AircraftParams = AircraftParams(),
    estimator: Callable | None = None,
    controller: ControllerConfig = ControllerConfig(),
    sim: SimConfig = SimConfig(),
    fixed_setpoint: float | Callable[[float], float] = 0.1,
    keep_windows: bool = False,
) -> ExperimentResult:
    """Slip regulation with set-point from a constant, the live estimate, or the true optimum.

    ``fixed_setpoint`` may be a function of time. Its value at t=0 doubles as
    the initial set-point for the live source, held until the first estimate
    passes the sanity gate.
    """
    setpoint_fn = fixed_setpoint if callable(fixed_setpoint) else (lambda t: fixed_setpoint)
    if setpoint_source not in SETPOINT_SOURCES:
        raise DomainError(f"setpoint source must be one of {SETPOINT_SOURCES}")
    if setpoint_source == "mlp" and estimator is None:
        raise DomainError("live set-point needs an estimator")
    if abs(controller.tick - sim.tick) > 1e-12:
        sim = SimConfig(**{**sim.__dict__, "tick": controller.tick})
    ctrl = [ControllerState(torque=0.0, integral=0.0, setpoint=setpoint_fn(0.0))]

    def torque_fn(state, lam, est, var, x):
        if setpoint_source == "fixed":
            lam_set = setpoint_fn(state.t)
        elif setpoint_source == "oracle":
            lam_set = optimal_point_closed_form(schedule.surface_at(state.t, x)).lambda_star
        else:
            lam_set = est if math.isfinite(est) else None
        new, T_b = control_step(ctrl[0], lam, lam_set, pilot(state.t), controller, state.v, params.J, params.r)
        ctrl[0] = new
        return T_b

    return _run(schedule, params, sim, torque_fn, estimator, keep_windows)


# --- metrics ---------------------------------------------------------------

def rolling_slip_bounds(lam: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Min and max of the trailing ``n`` slips at each tick (NaN until ``n`` are available)."""
    lo = np.full(lam.shape, np.nan)
    hi = np.full(lam.shape, np.nan)
    if lam.size >= n:
        view = np.lib.stride_tricks.sliding_window_view(lam, n)
        lo[n - 1:] = view.min(axis=1)
        hi[n - 1:] = view.max(axis=1)
    return lo, hi


def compute_metrics(trace: dict[str, np.ndarray], schedule: RoadSchedule | None = None, window: int = 15) -> dict[str, float]:
    """Scalar summary of a trace.

    Slip bands classify each tick by the trailing ``window`` slips: "low"
    when all are <= 0.08, "high" when any exceeds 0.1.
    """
    t = trace["t"]
    if t.size == 0:
        raise DomainError("empty trace")
    est = trace["lambda_star_hat"]
    valid = np.isfinite(est)
    err = est[valid] - trace["lambda_star_true"][valid]
    sn = trace["sigma_norm"]
    lo, hi = rolling_slip_bounds(trace["lambda_L"], window)
    low = valid & (hi <= LOW_SLIP_MAX) & np.isfinite(sn)
    high = valid & (hi > HIGH_SLIP_MIN) & np.isfinite(sn)
    v = trace["v"]
    out = {
        "ticks": float(t.size),
        "valid_estimates": float(valid.sum()),
        "duration_s": float(t[-1] - t[0]),
        "final_speed": float(v[-1]),
        "stopping_distance_m": float(np.trapezoid(v, t)) if t.size > 1 else 0.0,
        "tracking_rmse": float(np.sqrt(np.mean(err ** 2))) if err.size else math.nan,
        "mean_sigma_norm": float(np.nanmean(sn[valid])) if valid.any() else math.nan,
        "low_slip_ticks": float(low.sum()),
        "high_slip_ticks": float(high.sum()),
        "low_slip_sigma_norm": float(sn[low].mean()) if low.any() else math.nan,
        "high_slip_sigma_norm": float(sn[high].mean()) if high.any() else math.nan,
    }
    out["band_ratio"] = (
        out["low_slip_sigma_norm"] / out["high_slip_sigma_norm"]
        if low.any() and high.any() else math.nan
    )
    return out


def transition_stats(
    result: ExperimentResult, horizon: float = 1.0
) -> list[dict[str, float]]:
    """Normalized-uncertainty peak after each surface switch vs the mean before it."""
    tr = result.trace
    t = tr["t"]
    x = np.concatenate([[0.0], np.cumsum(0.5 * (tr["v"][1:] + tr["v"][:-1]) * np.diff(t))])
    sn = tr["sigma_norm"]
    out = []
    segs = result.schedule.segments
    for i, tt in enumerate(result.schedule.transition_times(t, x)):
        before = (t >= tt - horizon) & (t < tt) & np.isfinite(sn)
        after = (t >= tt) & (t < tt + horizon) & np.isfinite(sn)
        pre = float(sn[before].mean()) if before.any() else math.nan
        peak = float(sn[after].max()) if after.any() else math.nan
        from_mu = optimal_point_closed_form(segs[i].surface).mu_star
        to_mu = optimal_point_closed_form(segs[i + 1].surface).mu_star
        out.append({
            "time": tt,
            "from": segs[i].name or str(i),
            "to": segs[i + 1].name or str(i + 1),
            "high_to_low": float(to_mu < from_mu),
            "pre_mean": pre,
            "post_peak": peak,
            "ratio": peak / pre if pre > 0 else math.nan,
        })
    return out


# --- trace I/O -------------------------------------------------------------

def write_trace_csv(trace: dict[str, np.ndarray], path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        cols = [trace[c] for c in TRACE_COLUMNS]
        for i in range(len(cols[0])):
            w.writerow([repr(float(c[i])) for c in cols])
    finally:
        if own:
            fh.close()


def read_trace_csv(path_or_buf) -> dict[str, np.ndarray]:
    if isinstance(path_or_buf, str) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, newline="") as fh:
            text = fh.read()
    else:
        text = path_or_buf.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TRACE_COLUMNS:
        raise ScenarioError(f"unexpected trace header {header}")
    data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
