"""Boundary-layer sliding-mode slip regulator acting on the pilot's brake demand.

The sliding variable is the slip error ``s = lam - lam_set``. Linearising the
wheel equation gives ``dlam/dt ~ (r / (J v)) (T_b - r mu F_z)``, so all gains
are applied through the factor ``J v / r``, which turns slip-rate gains
(1/s) into torques and keeps the loop bandwidth independent of speed::

    release = (J v / r) * (k_eq * s + k_sw * sat(s / phi)) + I
    dI/dt   = (J v / r) * k_int * s,      0 <= I <= T_pilot
    T_b     = clamp(T_pilot - release, 0, T_pilot), rate limited

With ``s == 0`` and no accumulated release the pilot's demand passes through.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from slipnet.exceptions import DomainError

SETPOINT_MIN = 0.02
SETPOINT_MAX = 0.5


def saturate(s: float, phi: float) -> float:
    if not phi > 0:
        raise DomainError("boundary layer width must be positive")
    return float(np.clip(s / phi, -1.0, 1.0))


@dataclass(frozen=True)
class ControllerConfig:
    # Effective in-layer gain is equivalent_gain + switching_gain / boundary_layer
    # per second; keep it * tick well below 1 or the sampled loop chatters.
    equivalent_gain: float = 100.0
    switching_gain: float = 5.0
    integral_gain: float = 1000.0
    boundary_layer: float = 0.05
    torque_rate_limit: float = 60_000.0
    tick: float = 5e-3

    def __post_init__(self):
        for name in ("equivalent_gain", "switching_gain", "boundary_layer", "torque_rate_limit", "tick"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.integral_gain < 0:
            raise DomainError("integral_gain must be non-negative")


@dataclass(frozen=True)
class ControllerState:
    torque: float = 0.0
    integral: float = 0.0  # accumulated torque release, N*m
    setpoint: float = 0.1


def control_step(
    state: ControllerState,
    lam_measured: float,
    lam_set: float | None,
    T_pilot: float,
    config: ControllerConfig,
    v: float,
    J: float,
    r: float,
) -> tuple[ControllerState, float]:
    """Advance the controller by one tick; returns ``(new_state, T_b)``.

    An out-of-range ``lam_set`` (or ``None``) keeps the previous set-point.
    """
    if T_pilot < 0:
        raise DomainError("pilot torque must be non-negative")
    if lam_set is not None and SETPOINT_MIN <= lam_set <= SETPOINT_MAX:
        setpoint = float(lam_set)
    else:
        setpoint = state.setpoint

    s = lam_measured - setpoint
    scale = J * v / r
    integral = state.integral + scale * config.integral_gain * s * config.tick
    integral = min(max(integral, 0.0), T_pilot)
    release = scale * (config.equivalent_gain * s + config.switching_gain * saturate(s, config.boundary_layer))
    target = min(max(T_pilot - release - integral, 0.0), T_pilot)

    max_delta = config.torque_rate_limit * config.tick
    torque = state.torque + float(np.clip(target - state.torque, -max_delta, max_delta))
    torque = min(max(torque, 0.0), T_pilot)
    return replace(state, torque=torque, integral=integral, setpoint=setpoint), torque
