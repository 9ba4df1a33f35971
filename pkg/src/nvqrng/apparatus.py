"""Beam-splitter / detector parameters and the dead-time click-rate model."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

from .g2 import G2Model, g2_integral


class ModelRangeError(ValueError):
    """The first-order dead-time correction is outside its range of validity."""


# Coordinates over which uncertainties are propagated, in field order.
PARAMETERS = ("t", "r", "eta_a", "eta_b", "tau_dead_a", "tau_dead_b", "i_in")


@dataclass
class ApparatusParams:
    """Beam splitter (t, r), detector efficiencies, dead times (ns), incident rate (s^-1).

    Channel A sits in the transmitted arm, channel B in the reflected arm.
    """

    t: float = 0.39
    r: float = 0.61
    eta_a: float = 0.60
    eta_b: float = 0.60
    tau_dead_a: float = 43.5
    tau_dead_b: float = 42.9
    i_in: float = 166e3

    def __post_init__(self):
        if abs(self.t + self.r - 1.0) > 1e-12:
            raise ValueError(f"loss-less splitter needs t + r = 1, got {self.t + self.r}")
        if not (0 < self.t < 1 and 0 < self.r < 1):
            raise ValueError("t and r must lie in (0, 1)")
        for name in ("eta_a", "eta_b"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.tau_dead_a < 0 or self.tau_dead_b < 0:
            raise ValueError("dead times must be non-negative")
        if self.i_in < 0:
            raise ValueError("incident rate must be non-negative")

    def perturbed(self, name: str, value: float) -> "ApparatusParams":
        """Copy with one coordinate moved, skipping validation.

        Partial derivatives move t and r independently, so the copy may
        break t + r = 1 by the size of a finite-difference step.
        """
        if name not in PARAMETERS:
            raise KeyError(name)
        out = copy.copy(self)
        setattr(out, name, value)
        return out

    @property
    def incident_a(self) -> float:
        """Photon rate reaching detector A that it would register without dead time."""
        return self.eta_a * self.t * self.i_in

    @property
    def incident_b(self) -> float:
        return self.eta_b * self.r * self.i_in

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ParamSigmas:
    """One-sigma uncertainties. `splitter` applies to whichever of t or r is varied."""

    splitter: float = 0.004
    eta_a: float = 0.01
    eta_b: float = 0.01
    tau_dead_a: float = 10.0
    tau_dead_b: float = 10.0
    i_in: float = math.sqrt(166e3)

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"sigma {k} must be non-negative, got {v}")

    @classmethod
    def reference(cls, apparatus: ApparatusParams) -> "ParamSigmas":
        """Default uncertainty set with shot-noise sigma on the incident rate."""
        return cls(i_in=math.sqrt(apparatus.i_in))

    def for_parameter(self, name: str) -> float:
        if name in ("t", "r"):
            return self.splitter
        return getattr(self, name)

    def to_dict(self) -> dict:
        return asdict(self)


def dead_window(g2: G2Model, tau_ns: float) -> float:
    """g2-weighted dead-time window in seconds."""
    return g2_integral(g2, 0.0, tau_ns) * 1e-9


def analytic_click_rates(apparatus: ApparatusParams, g2: G2Model) -> tuple[float, float]:
    """Click rates (s^-1) of both detectors under the first-order dead-time correction.

    r = x - x^2 * W / 4, with x the dead-time-free click rate and W the
    g2-weighted dead-time window.
    """
    out = []
    for x, tau in (
        (apparatus.incident_a, apparatus.tau_dead_a),
        (apparatus.incident_b, apparatus.tau_dead_b),
    ):
        correction = x * x * dead_window(g2, tau) / 4.0
        if correction > x:
            raise ModelRangeError(
                f"dead-time correction {correction:.4g} exceeds first-order rate {x:.4g}"
            )
        out.append(x - correction)
    return out[0], out[1]
