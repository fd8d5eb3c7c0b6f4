"""Braking aircraft on a Burckhardt surface, plus the inversion block.

State is ground speed ``v`` and the two main-wheel speeds. Per wheel::

    M dv/dt  = -F_xL - F_xR - F_D          F_D = K_D v**2
    J dw_i/dt = r F_xi - T_bi              F_xi = mu(lam_i) F_z
    lam_i = (v - r w_i) / v                F_z = Q_g (M g - K_P v**2), >= 0

A locked wheel (``w == 0``) whose brake torque exceeds the tire torque stays
locked: the brake then only transmits ``r F_x``. That transmitted torque is
what the simulator reports as the measured brake torque.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from slipnet.exceptions import DegenerateLoadError, SingularSpeedError
from slipnet.friction import BurckhardtParams, mu

V_MIN = 1.0
V_STOP = 5.0
MU_MAX_INVERTED = 1.5


@dataclass(frozen=True)
class AircraftParams:
    M: float = 6000.0
    J: float = 1.5
    r: float = 0.3
    K_D: float = 2.5
    K_P: float | None = None
    Q_g: float = 0.45
    g: float = 9.81
    v_touchdown: float = 70.0
    lift_fraction: float = 0.3

    def __post_init__(self):
        for name in ("M", "J", "r", "K_D", "g", "v_touchdown"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.Q_g < 1:
            raise ValueError("Q_g must lie in (0, 1)")
        if self.K_P is None:
            # lift at touchdown speed equals lift_fraction of the weight
            k_p = self.lift_fraction * self.M * self.g / self.v_touchdown ** 2
            object.__setattr__(self, "K_P", k_p)
        if not self.K_P >= 0:
            raise ValueError("K_P must be non-negative")

    @property
    def static_load(self) -> float:
        return self.Q_g * self.M * self.g


@dataclass(frozen=True)
class AircraftState:
    v: float
    omega_L: float
    omega_R: float
    t: float = 0.0

    @classmethod
    def touchdown(cls, params: AircraftParams, v0: float | None = None) -> "AircraftState":
        v0 = params.v_touchdown if v0 is None else v0
        return cls(v0, v0 / params.r, v0 / params.r, 0.0)

    def kinetic_energy(self, params: AircraftParams) -> float:
        return 0.5 * params.M * self.v ** 2 + 0.5 * params.J * (self.omega_L ** 2 + self.omega_R ** 2)


@dataclass(frozen=True)
class Forces:
    F_x_L: float
    F_x_R: float
    F_D: float
    F_z: float


@dataclass(frozen=True)
class MeasurementSample:
    v: float
    omega: float
    T_b: float
    t: float


def slip(v: float, omega: float, r: float, v_min: float = V_MIN) -> float:
    if not v >= v_min:
        raise SingularSpeedError(f"speed {v:.4g} m/s below {v_min} m/s; slip undefined")
    lam = (v - r * omega) / v
    return min(max(lam, 0.0), 1.0)


def vertical_load(params: AircraftParams, v: float) -> float:
    return max(params.Q_g * (params.M * params.g - params.K_P * v * v), 0.0)


def _road_pair(road):
    if isinstance(road, BurckhardtParams):
        return road, road
    left, right = road
    return left, right


def tire_forces(state: AircraftState, params: AircraftParams, road) -> Forces:
    road_L, road_R = _road_pair(road)
    F_z = vertical_load(params, state.v)
    lam_L = slip(state.v, state.omega_L, params.r)
    lam_R = slip(state.v, state.omega_R, params.r)
    return Forces(mu(road_L, lam_L) * F_z, mu(road_R, lam_R) * F_z, params.K_D * state.v ** 2, F_z)


def transmitted_torque(omega: float, T_b: float, F_x: float, r: float) -> float:
    """Brake torque actually acting on the wheel (a locked brake only holds ``r*F_x``)."""
    if omega <= 0.0 and T_b >= r * F_x:
        return r * F_x
    return T_b


def _rates(v, wL, wR, T_L, T_R, params: AircraftParams, road_L, road_R):
    r = params.r
    if not v >= V_MIN:
        raise SingularSpeedError(f"speed {v:.4g} m/s below {V_MIN} m/s; slip undefined")
    F_z = max(params.Q_g * (params.M * params.g - params.K_P * v * v), 0.0)
    lam_L = min(max((v - r * wL) / v, 0.0), 1.0)
    lam_R = min(max((v - r * wR) / v, 0.0), 1.0)
    b1, b2, b3 = road_L.beta1, road_L.beta2, road_L.beta3
    F_L = (b1 * -math.expm1(-b2 * lam_L) - b3 * lam_L) * F_z
    b1, b2, b3 = road_R.beta1, road_R.beta2, road_R.beta3
    F_R = (b1 * -math.expm1(-b2 * lam_R) - b3 * lam_R) * F_z
    T_L = transmitted_torque(wL, T_L, F_L, r)
    T_R = transmitted_torque(wR, T_R, F_R, r)
    F_D = params.K_D * v * v
    return (
        (-F_L - F_R - F_D) / params.M,
        (r * F_L - T_L) / params.J,
        (r * F_R - T_R) / params.J,
    )


def derivatives(state: AircraftState, torques: Sequence[float], params: AircraftParams, road) -> np.ndarray:
    """``[dv/dt, dw_L/dt, dw_R/dt]``. ``road`` is one surface or a (left, right) pair."""
    road_L, road_R = _road_pair(road)
    T_L, T_R = torques
    if T_L < 0 or T_R < 0:
        raise ValueError("brake torques must be non-negative")
    return np.array(_rates(state.v, state.omega_L, state.omega_R, T_L, T_R, params, road_L, road_R))


def _stiffness_bound(v, params: AircraftParams, road_L, road_R) -> float:
    """Upper bound on |d(dw/dt)/dw|: tire slope at zero slip mapped through r**2 F_z / (J v)."""
    F_z = vertical_load(params, v)
    slope = max(road_L.beta1 * road_L.beta2, road_R.beta1 * road_R.beta2)
    return params.r ** 2 * F_z * slope / (params.J * max(v, V_MIN))


def _rk4(v, wL, wR, T_L, T_R, params, road_L, road_R, dt):
    def f(a, b, c):
        return _rates(a, b, c, T_L, T_R, params, road_L, road_R)

    k1 = f(v, wL, wR)
    h = 0.5 * dt
    k2 = f(v + h * k1[0], wL + h * k1[1], wR + h * k1[2])
    k3 = f(v + h * k2[0], wL + h * k2[1], wR + h * k2[2])
    k4 = f(v + dt * k3[0], wL + dt * k3[1], wR + dt * k3[2])
    s = dt / 6.0
    v = max(v + s * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]), 0.0)
    wL = wL + s * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    wR = wR + s * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    w_max = v / params.r
    return v, min(max(wL, 0.0), w_max), min(max(wR, 0.0), w_max)


# RK4's real-axis stability limit is ~2.78; keep h * stiffness under this.
_RK4_SAFE = 2.0


def step(
    state: AircraftState,
    torques: Sequence[float],
    params: AircraftParams,
    road,
    dt: float = 1e-3,
    substeps: int | None = None,
) -> AircraftState:
    """Advance by ``dt`` with classical RK4; wheel speeds clamped to ``[0, v/r]``.

    The wheel dynamics stiffen like ``1/v`` near free rolling, so by default
    the step is split into as many equal RK4 substeps as the stiffness bound
    at the current speed requires (one at high speed). The split depends only
    on the state, so runs stay bit-reproducible.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    road_L, road_R = _road_pair(road)
    T_L, T_R = float(torques[0]), float(torques[1])
    if T_L < 0 or T_R < 0:
        raise ValueError("brake torques must be non-negative")
    if substeps is None:
        substeps = max(1, math.ceil(dt * _stiffness_bound(state.v, params, road_L, road_R) / _RK4_SAFE))
    h = dt / substeps
    v, wL, wR = state.v, state.omega_L, state.omega_R
    for _ in range(substeps):
        v, wL, wR = _rk4(v, wL, wR, T_L, T_R, params, road_L, road_R, h)
    return AircraftState(v, wL, wR, state.t + dt)


def measure(state: AircraftState, T_b: float, params: AircraftParams, road, wheel: str = "L") -> MeasurementSample:
    """Noiseless sensor reading of one wheel, reporting the transmitted brake torque."""
    forces = tire_forces(state, params, road)
    if wheel == "L":
        omega, F_x = state.omega_L, forces.F_x_L
    else:
        omega, F_x = state.omega_R, forces.F_x_R
    return MeasurementSample(state.v, omega, transmitted_torque(omega, T_b, F_x, params.r), state.t)


class StreamingInverter:
    """Online inversion of the wheel dynamics into (slip, friction) pairs.

    Wheel acceleration is a centred difference of consecutive speed samples
    (forward difference for the first sample, backward for a final flush),
    optionally smoothed by a first-order low-pass with time constant ``tau``
    (off by default: on noiseless data its lag biases the friction estimate
    whenever the wheel accelerates). Because
    the centred difference needs the next sample, :meth:`push` returns the
    pair for the *previous* sample, or ``None`` on the first call.

    A sample's ``T_b`` is the torque that acted over the step ending at that
    sample. The brake torque in the inversion is therefore averaged over the
    same interval the difference spans, so a torque change between steps does
    not bias the friction estimate.
    """

    def __init__(self, params: AircraftParams, tau: float = 0.0, v_min: float = V_MIN, load_floor: float = 1.0):
        self.params = params
        self.tau = tau
        self.v_min = v_min
        self.load_floor = load_floor
        self._prev = None
        self._cur = None
        self._filtered = None

    def _emit(self, sample: MeasurementSample, omega_dot: float, dt: float, T_b: float):
        if self._filtered is None or self.tau <= 0:
            self._filtered = omega_dot
        else:
            alpha = dt / (self.tau + dt)
            self._filtered += alpha * (omega_dot - self._filtered)
        p = self.params
        lam = slip(sample.v, sample.omega, p.r, self.v_min)
        F_z = vertical_load(p, sample.v)
        if F_z < self.load_floor:
            raise DegenerateLoadError(f"vertical load {F_z:.3g} N below floor at t={sample.t:.4f}s")
        mu_hat = (p.J * self._filtered + T_b) / (p.r * F_z)
        return lam, min(max(mu_hat, 0.0), MU_MAX_INVERTED)

    def push(self, sample: MeasurementSample):
        prev, cur = self._prev, self._cur
        self._prev, self._cur = cur, sample
        if cur is None:
            return None
        if prev is None:
            dt = sample.t - cur.t
            return self._emit(cur, (sample.omega - cur.omega) / dt, dt, sample.T_b)
        dt = 0.5 * (sample.t - prev.t)
        T_mid = 0.5 * (cur.T_b + sample.T_b)
        return self._emit(cur, (sample.omega - prev.omega) / (sample.t - prev.t), dt, T_mid)

    def flush(self):
        prev, cur = self._prev, self._cur
        if cur is None or prev is None:
            return None
        dt = cur.t - prev.t
        out = self._emit(cur, (cur.omega - prev.omega) / dt, dt, cur.T_b)
        self._prev = self._cur = None
        return out


def invert_measurements(samples: Sequence[MeasurementSample], params: AircraftParams, tau: float = 0.0) -> np.ndarray:
    """Batch inversion; returns an ``(len(samples), 2)`` array of (slip, friction)."""
    if len(samples) < 2:
        raise ValueError("need at least two samples to differentiate wheel speed")
    inv = StreamingInverter(params, tau)
    out = []
    for s in samples:
        pair = inv.push(s)
        if pair is not None:
            out.append(pair)
    out.append(inv.flush())
    return np.array(out)


