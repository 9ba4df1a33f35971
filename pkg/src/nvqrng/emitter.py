"""Three-level emitter: rate equations, steady state, g2 and power dependence.

Rates are in ns^-1 and delays in ns; photon rates handed to the rest of
the pipeline are in s^-1.

    d rho1/dt = -k12 rho1 + k21 rho2 + k31 rho3
    d rho2/dt =  k12 rho1 - (k21 + k23) rho2
    d rho3/dt =  k23 rho2 - k31 rho3
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .apparatus import ApparatusParams
from .g2 import G2Model


class SingularSystemError(ValueError):
    """The rate equations have no unique stationary solution."""


@dataclass(frozen=True)
class ThreeLevelRates:
    k12: float
    k21: float
    k23: float
    k31: float

    def __post_init__(self):
        if min(self.k12, self.k21, self.k23, self.k31) < 0:
            raise ValueError(f"rates must be non-negative: {self}")
        if self.k21 <= 0:
            raise ValueError("k21 must be positive")

    def matrix(self) -> np.ndarray:
        k12, k21, k23, k31 = self.k12, self.k21, self.k23, self.k31
        return np.array(
            [
                [-k12, k21, k31],
                [k12, -(k21 + k23), 0.0],
                [0.0, k23, -k31],
            ]
        )


@dataclass(frozen=True)
class PowerModel:
    """Linear power dependence of the rates, background and detection efficiency.

    Defaults are the saturation-curve fit of the reference NV centre.
    """

    pump: float = 0.77601  # ns^-1 mW^-1
    k21: float = 1 / 16.08  # ns^-1
    k23_slope: float = 1 / 30.97  # ns^-1 mW^-1
    k23_offset: float = 1 / 1000  # ns^-1
    k31_slope: float = 1 / 78.37  # ns^-1 mW^-1
    k31_offset: float = 1 / 471.7  # ns^-1
    background: float = 5.2e6  # s^-1 mW^-1
    efficiency: float = 0.00779  # detected clicks per emitted photon

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"power-model coefficient {k} must be non-negative")
        if not 0 < self.efficiency <= 1:
            raise ValueError("overall efficiency must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Populations:
    rho1: float
    rho2: float
    rho3: float

    def __iter__(self):
        return iter((self.rho1, self.rho2, self.rho3))


def rates_from_power(power: float, model: PowerModel = PowerModel()) -> ThreeLevelRates:
    """Rates at excitation power `power` (mW)."""
    if power < 0:
        raise ValueError(f"power must be non-negative, got {power}")
    return ThreeLevelRates(
        k12=model.pump * power,
        k21=model.k21,
        k23=model.k23_slope * power + model.k23_offset,
        k31=model.k31_slope * power + model.k31_offset,
    )


def steady_state(rates: ThreeLevelRates) -> Populations:
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    w1 = k31 * (k21 + k23)
    w2 = k12 * k31
    w3 = k12 * k23
    z = w1 + w2 + w3
    if z <= 0:
        raise SingularSystemError(f"no unique steady state for {rates}")
    return Populations(w1 / z, w2 / z, w3 / z)


def _reduced(rates: ThreeLevelRates):
    # rho3 = 1 - rho1 - rho2 leaves a 2x2 system; return its trace/2 and
    # the squared half-gap of the eigenvalues m +- s.
    k12, k21, k23, k31 = rates.k12, rates.k21, rates.k23, rates.k31
    b11, b12 = -(k12 + k31), k21 - k31
    b21, b22 = k12, -(k21 + k23)
    m = 0.5 * (b11 + b22)
    det = b11 * b22 - b12 * b21
    return m, m * m - det


def g2_analytic(rates: ThreeLevelRates, tau):
    """Second-order correlation rho2(tau) / rho2(inf) for a start in the ground state.

    Closed form of the 2x2 reduced system; valid for real, complex and
    repeated eigenvalues. Negative delays use g2(-tau) = g2(tau).
    """
    rho2_inf = steady_state(rates).rho2
    if rho2_inf <= 0:
        raise SingularSystemError("excited state is never populated (k12 = 0)")
    x = np.abs(np.asarray(tau, dtype=float))
    m, s2 = _reduced(rates)
    # rho2 - rho2_inf starts at -rho2_inf with slope k12
    d0 = -rho2_inf
    slope = rates.k12 - m * d0
    scale = m * m + abs(s2)
    if s2 > 1e-14 * scale:
        s = math.sqrt(s2)
        ep, em = np.exp((m + s) * x), np.exp((m - s) * x)
        dev = d0 * 0.5 * (ep + em) + slope * (ep - em) / (2 * s)
    elif s2 < -1e-14 * scale:
        w = math.sqrt(-s2)
        dev = np.exp(m * x) * (d0 * np.cos(w * x) + slope * np.sin(w * x) / w)
    else:
        dev = np.exp(m * x) * (d0 + slope * x)
    out = 1.0 + dev / rho2_inf
    return out if out.ndim else float(out)


def g2_model_from_rates(rates: ThreeLevelRates) -> G2Model:
    """Express the analytic g2 as the bi-exponential model.

    Requires distinct real eigenvalues, which holds throughout the usual
    NV regime.
    """
    rho2_inf = steady_state(rates).rho2
    if rho2_inf <= 0:
        raise SingularSystemError("excited state is never populated (k12 = 0)")
    m, s2 = _reduced(rates)
    if s2 <= 1e-14 * (m * m):
        raise ValueError("eigenvalues are complex or degenerate; no bi-exponential form")
    s = math.sqrt(s2)
    slow, fast = m + s, m - s  # both negative, slow closer to zero
    # rho2 - rho2_inf = alpha e^{slow t} + beta e^{fast t}
    # alpha + beta = -rho2_inf ; alpha*slow + beta*fast = k12
    alpha = (rates.k12 + rho2_inf * fast) / (slow - fast)
    beta = -rho2_inf - alpha
    return G2Model(a=-beta / rho2_inf, lambda1=-fast, b=max(alpha / rho2_inf, 0.0), lambda2=-slow)


def fluorescence_rates(power: float, model: PowerModel = PowerModel()) -> tuple[float, float, float]:
    """Emitted rate F, emitted-plus-background rate F_bg and detected rate, all in s^-1."""
    rates = rates_from_power(power, model)
    if rates.k12 == 0:
        emitted = 0.0
    else:
        emitted = steady_state(rates).rho2 * rates.k21 * 1e9
    total = emitted + model.background * power
    return emitted, total, total * model.efficiency


def source_g2(power: float, model: PowerModel = PowerModel()) -> G2Model:
    """g2 of emitter plus uncorrelated background at the given power."""
    emitted, total, _ = fluorescence_rates(power, model)
    signal = emitted / total
    return g2_model_from_rates(rates_from_power(power, model)).scaled(signal * signal)


def apparatus_at_power(
    power: float, apparatus: ApparatusParams, model: PowerModel = PowerModel()
) -> ApparatusParams:
    """Apparatus with its incident rate set by the detected rate at `power`."""
    _, _, detected = fluorescence_rates(power, model)
    transfer = apparatus.eta_a * apparatus.t + apparatus.eta_b * apparatus.r
    return replace(apparatus, i_in=detected / transfer)


@dataclass(frozen=True)
class RateCurve:
    powers: np.ndarray
    rates: np.ndarray

    @property
    def argmax_power(self) -> float:
        return float(self.powers[int(np.argmax(self.rates))])


def randomness_rate_curve(
    powers: Sequence[float],
    apparatus: ApparatusParams = ApparatusParams(),
    model: PowerModel = PowerModel(),
) -> RateCurve:
    """Quantum random-bit rate r_rand (s^-1) across excitation powers.

    Powers with no photons, or whose g2 never dips below 1, contribute zero.
    """
    from .entropy import random_rate
    from .g2 import NoCrossingError

    powers = np.asarray(powers, dtype=float)
    if powers.size == 0 or np.any(powers < 0):
        raise ValueError("need a non-empty grid of non-negative powers")
    out = np.zeros_like(powers)
    for i, p in enumerate(powers):
        if p == 0:
            continue
        try:
            out[i] = random_rate(apparatus_at_power(p, apparatus, model), source_g2(p, model))
        except NoCrossingError:
            out[i] = 0.0
    return RateCurve(powers, out)
