"""Burckhardt slip-friction curves and optimal-slip oracles.

The static Burckhardt curve is

    mu(lam) = beta1 * (1 - exp(-beta2 * lam)) - beta3 * lam,   lam in [0, 1]

Its unique maximum ``(lambda_star, mu_star)`` is the braking set-point that
gives the largest deceleration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from slipnet.exceptions import DomainError


@dataclass(frozen=True)
class BurckhardtParams:
    beta1: float
    beta2: float
    beta3: float

    def __post_init__(self):
        values = (self.beta1, self.beta2, self.beta3)
        if not all(math.isfinite(b) for b in values):
            raise DomainError(f"Burckhardt parameters must be finite, got {values}")
        if self.beta1 <= 0 or self.beta2 <= 0 or self.beta3 < 0:
            raise DomainError(
                f"need beta1 > 0, beta2 > 0, beta3 >= 0, got {values}"
            )
        if self.beta1 * self.beta2 <= self.beta3:
            raise DomainError(
                f"beta1*beta2 must exceed beta3 for an interior maximum, got {values}"
            )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.beta1, self.beta2, self.beta3)


class ReferenceRoad(Enum):
    DRY = BurckhardtParams(1.2801, 23.99, 0.52)
    WET = BurckhardtParams(0.857, 33.822, 0.347)
    SNOW = BurckhardtParams(0.1946, 94.129, 0.0646)

    @property
    def params(self) -> BurckhardtParams:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "ReferenceRoad":
        key = name.strip().upper()
        aliases = {"D": "DRY", "W": "WET", "S": "SNOW"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise DomainError(f"unknown reference road {name!r}") from None


REFERENCE_ROADS = tuple(road.params for road in ReferenceRoad)


@dataclass(frozen=True)
class OptimalPoint:
    lambda_star: float
    mu_star: float


def mu(params: BurckhardtParams, lam):
    """Friction coefficient at slip ``lam`` (scalar or array in [0, 1])."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(~np.isfinite(lam_arr)) or np.any(lam_arr < 0.0) or np.any(lam_arr > 1.0):
        raise DomainError("slip must lie in [0, 1]")
    b1, b2, b3 = params.as_tuple()
    # -expm1(-x) == 1 - exp(-x) and is exactly 0 at x = 0
    out = b1 * -np.expm1(-b2 * lam_arr) - b3 * lam_arr
    if out.ndim == 0:
        return float(out)
    return out


def mu_slope(params: BurckhardtParams, lam):
    """d mu / d lam."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    b1, b2, b3 = params.as_tuple()
    out = b1 * b2 * np.exp(-b2 * lam_arr) - b3
    return float(out) if out.ndim == 0 else out


def optimal_point_closed_form(params: BurckhardtParams) -> OptimalPoint:
    """Stationary point of the curve, clamped to the slip domain.

    With ``beta3 == 0`` the curve increases monotonically and the supremum on
    [0, 1] sits at the locked-wheel end.
    """
    b1, b2, b3 = params.as_tuple()
    if b3 == 0.0:
        lam_star = 1.0
    else:
        lam_star = min(math.log(b1 * b2 / b3) / b2, 1.0)
    return OptimalPoint(lam_star, mu(params, lam_star))


def optimal_point_grid(params: BurckhardtParams, num_points: int) -> OptimalPoint:
    """Brute-force argmax of the curve over ``num_points`` evenly spaced slips."""
    if num_points < 2:
        raise DomainError("num_points must be at least 2")
    grid = np.linspace(0.0, 1.0, int(num_points))
    values = mu(params, grid)
    k = int(np.argmax(values))
    return OptimalPoint(float(grid[k]), float(values[k]))


def parse_road(text: str) -> BurckhardtParams:
    """Road from a reference name (``wet``) or ``b1,b2,b3`` triple."""
    if "," in text:
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 3:
            raise DomainError(f"expected three comma-separated betas, got {text!r}")
        try:
            b1, b2, b3 = (float(p) for p in parts)
        except ValueError:
            raise DomainError(f"non-numeric beta in {text!r}") from None
        return BurckhardtParams(b1, b2, b3)
    return ReferenceRoad.from_name(text).params
