"""Bi-exponential anti-bunching model and its closed-form helpers.

The model is

    g2(tau) = 1 - a * exp(-lambda1 * |tau|) + b * exp(-lambda2 * |tau|)

with delays in nanoseconds and rates in ns^-1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class NoCrossingError(ValueError):
    """The model never returns to the classical line g2 = 1 at finite delay."""


@dataclass(frozen=True)
class G2Model:
    a: float
    lambda1: float
    b: float
    lambda2: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValueError(f"amplitudes must be non-negative, got a={self.a}, b={self.b}")
        if not (self.lambda1 > self.lambda2 > 0):
            raise ValueError(
                f"need lambda1 > lambda2 > 0, got {self.lambda1}, {self.lambda2}"
            )
        # the curve minimum over tau >= 0 is min(g2(0), 1)
        if self.g2_0 < -1e-12:
            raise ValueError(f"g2(0) = {self.g2_0} is negative")

    @property
    def g2_0(self) -> float:
        return 1.0 - self.a + self.b

    def __call__(self, tau):
        x = np.abs(np.asarray(tau, dtype=float))
        out = 1.0 - self.a * np.exp(-self.lambda1 * x) + self.b * np.exp(-self.lambda2 * x)
        return out if out.ndim else float(out)

    def scaled(self, visibility: float) -> "G2Model":
        """Model after mixing with uncorrelated light, g -> 1 + v * (g - 1)."""
        return G2Model(self.a * visibility, self.lambda1, self.b * visibility, self.lambda2)

    def to_dict(self) -> dict:
        return asdict(self)


# Reference fit of the 26 uW data set (rates converted from s^-1 to ns^-1).
REFERENCE_G2 = G2Model(a=1.06678, lambda1=0.0866533, b=0.178378, lambda2=0.00200826)


def classical_crossing(model: G2Model) -> float:
    """Positive delay (ns) at which the model crosses g2 = 1.

    Raises NoCrossingError when a < b (no dip below the line) or b == 0
    (the curve only reaches 1 asymptotically).
    """
    if model.a < model.b:
        raise NoCrossingError(f"a={model.a} < b={model.b}: curve never dips below 1")
    if model.b == 0:
        raise NoCrossingError("b=0: no finite crossing of the classical line")
    return math.log(model.a / model.b) / (model.lambda1 - model.lambda2)


def _half_integral(model: G2Model, u):
    # integral of g2 over [0, u] for u >= 0
    return (
        u
        + (model.a / model.lambda1) * np.expm1(-model.lambda1 * u)
        - (model.b / model.lambda2) * np.expm1(-model.lambda2 * u)
    )


def _signed_integral(model: G2Model, x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * _half_integral(model, np.abs(x))


def g2_integral(model: G2Model, t1, t2):
    """Exact integral of the model over [t1, t2] in ns (symmetric in the sign of tau)."""
    if np.any(np.asarray(t1) > np.asarray(t2)):
        raise ValueError("t1 must not exceed t2")
    out = _signed_integral(model, t2) - _signed_integral(model, t1)
    return out if np.ndim(out) else float(out)
