"""CARA and DARA terminal utilities and their absolute risk-aversion profiles.

CARA:  U(x) = -exp(-a x),  -U''/U' = a.

DARA is exponential with risk aversion a0 up to the switch point x_star and
a1 above it, glued C1-continuously:

    W(x) = -exp(-a0 x) - c_star                     for x <= x_star,
    W(x) = -(a0/a1) exp(-a1 x + (a1 - a0) x_star)   for x >  x_star,

with c_star = exp(-a0 x_star) (a0 - a1) / a1. Its risk-aversion profile is
the step a0 -> a1 at x_star (left-closed: exactly at x_star the value is a0).
The profile is the terminal condition of the Riccati-transformed PDE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CARA = "cara"
DARA = "dara"


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    a: float | None = None
    a0: float | None = None
    a1: float | None = None
    x_star: float | None = None

    def __post_init__(self):
        if self.kind == CARA:
            if self.a is None or self.a <= 0:
                raise ConfigError(f"CARA requires risk aversion a > 0, got {self.a}")
        elif self.kind == DARA:
            if self.a0 is None or self.a1 is None or self.x_star is None:
                raise ConfigError("DARA requires a0, a1 and x_star")
            if not (self.a0 > self.a1 > 0):
                raise ConfigError(f"DARA requires a0 > a1 > 0, got a0={self.a0}, a1={self.a1}")
        else:
            raise ConfigError(f"unknown utility kind {self.kind!r}")

    @staticmethod
    def cara(a: float) -> "UtilitySpec":
        return UtilitySpec(kind=CARA, a=a)

    @staticmethod
    def dara(a0: float, a1: float, x_star: float) -> "UtilitySpec":
        return UtilitySpec(kind=DARA, a0=a0, a1=a1, x_star=x_star)

    @property
    def c_star(self) -> float:
        """DARA gluing constant making the value continuous at x_star."""
        if self.kind != DARA:
            raise ConfigError("c_star is only defined for DARA")
        return float(np.exp(-self.a0 * self.x_star) * (self.a0 - self.a1) / self.a1)

    def label(self) -> str:
        if self.kind == CARA:
            return f"cara(a={self.a:g})"
        return f"dara(a0={self.a0:g}, a1={self.a1:g}, x*={self.x_star:g})"


def utility_value(spec: UtilitySpec, x):
    """U(x); accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == CARA:
        out = -np.exp(-spec.a * x)
    else:
        lo = -np.exp(-spec.a0 * x) - spec.c_star
        hi = -(spec.a0 / spec.a1) * np.exp(-spec.a1 * x + (spec.a1 - spec.a0) * spec.x_star)
        out = np.where(x <= spec.x_star, lo, hi)
    return float(out) if out.ndim == 0 else out


def utility_prime(spec: UtilitySpec, x):
    """U'(x) > 0 for all finite x."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == CARA:
        out = spec.a * np.exp(-spec.a * x)
    else:
        lo = spec.a0 * np.exp(-spec.a0 * x)
        hi = spec.a0 * np.exp(-spec.a1 * x + (spec.a1 - spec.a0) * spec.x_star)
        out = np.where(x <= spec.x_star, lo, hi)
    return float(out) if out.ndim == 0 else out


def risk_aversion_profile(spec: UtilitySpec, x):
    """-U''(x)/U'(x): a for CARA; a0/a1 step (left-closed at x_star) for DARA."""
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == CARA:
        out = np.full_like(x, spec.a, dtype=np.float64)
    else:
        out = np.where(x <= spec.x_star, spec.a0, spec.a1)
    return float(out) if out.ndim == 0 else out
