"""Seeded photon-stream simulation: emitter, background, splitter, detectors.

All timestamps are integer picoseconds. Every stochastic operation takes
its own seed so runs are reproducible stage by stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .apparatus import ApparatusParams, ParamSigmas, analytic_click_rates  # noqa: F401
from .emitter import PowerModel, ThreeLevelRates, fluorescence_rates, rates_from_power
from .tags import TagStream

PS_PER_NS = 1000
PS_PER_S = 10**12


@dataclass
class EmissionStream:
    times_ps: np.ndarray
    duration_ps: int
    seed: int | None = None

    def __post_init__(self):
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        if self.duration_ps <= 0:
            raise ValueError("duration must be positive")

    def __len__(self) -> int:
        return len(self.times_ps)

    @property
    def rate(self) -> float:
        return len(self) / (self.duration_ps / PS_PER_S)


def _strictly_increasing(t: np.ndarray) -> np.ndarray:
    # integer rounding can merge neighbours; push ties forward by 1 ps
    if t.size < 2:
        return t
    return np.maximum.accumulate(t - np.arange(t.size)) + np.arange(t.size)


def _renewal_intervals(rates: ThreeLevelRates, keep: float, n: int, rng) -> np.ndarray:
    """Gaps (ns) between successive kept photons.

    The emitter restarts in the ground state after every photon, so the
    gaps are i.i.d. Between two kept photons there are N >= 1 emissions
    (geometric in `keep`) and S shelving excursions (negative binomial);
    each passage 1->2 and each stay in level 2 is exponential, hence the
    gamma sums.
    """
    n_emit = rng.geometric(keep, size=n) if keep < 1 else np.ones(n, dtype=np.int64)
    out_of_2 = rates.k21 + rates.k23
    q = rates.k21 / out_of_2
    shelved = rng.negative_binomial(n_emit, q) if rates.k23 > 0 else np.zeros(n, dtype=np.int64)
    cycles = n_emit + shelved
    gap = rng.gamma(cycles, 1.0 / rates.k12) + rng.gamma(cycles, 1.0 / out_of_2)
    has_shelf = shelved > 0
    if np.any(has_shelf):
        gap[has_shelf] += rng.gamma(shelved[has_shelf], 1.0 / rates.k31)
    return gap


def simulate_emitter(
    rates: ThreeLevelRates, duration_ps: int, seed: int, keep: float = 1.0, batch: int = 1 << 21
) -> EmissionStream:
    """Emission times of the three-level emitter over [0, duration).

    `keep` is the probability that an emitted photon is collected; only
    collected photons are generated, which keeps long runs cheap without
    changing their statistics. The emitter starts in the ground state.
    """
    if duration_ps <= 0:
        raise ValueError("duration must be positive")
    if not 0 < keep <= 1:
        raise ValueError("collection probability must lie in (0, 1]")
    if rates.k12 == 0:
        return EmissionStream(np.zeros(0, np.int64), duration_ps, seed)
    if rates.k23 > 0 and rates.k31 == 0:
        warnings.warn("k31 = 0: the emitter shelves permanently", RuntimeWarning, stacklevel=2)
        rates = ThreeLevelRates(rates.k12, rates.k21, rates.k23, 1e-300)
    rng = np.random.default_rng(seed)
    mean_gap = 1.0 / (keep * fluorescence_from_rates(rates))
    horizon = duration_ps / PS_PER_NS
    parts = []
    t_last = 0.0
    while True:
        n = min(int((horizon - t_last) / mean_gap * 1.05) + 64, batch)
        t = t_last + np.cumsum(_renewal_intervals(rates, keep, n, rng))
        parts.append(t[t < horizon])
        if t[-1] >= horizon:
            break
        t_last = t[-1]
    ps = np.concatenate([np.floor(p * PS_PER_NS).astype(np.int64) for p in parts])
    del parts
    ps = _strictly_increasing(ps)
    return EmissionStream(ps[ps < duration_ps], duration_ps, seed)


def fluorescence_from_rates(rates: ThreeLevelRates) -> float:
    """Mean emission rate in ns^-1."""
    from .emitter import steady_state

    return steady_state(rates).rho2 * rates.k21


def merge_background(stream: EmissionStream, bg_rate: float, seed: int) -> EmissionStream:
    """Add homogeneous Poisson background at `bg_rate` (s^-1)."""
    if bg_rate < 0:
        raise ValueError("background rate must be non-negative")
    if bg_rate == 0:
        return stream
    rng = np.random.default_rng(seed)
    n = rng.poisson(bg_rate * stream.duration_ps / PS_PER_S)
    bg = rng.integers(0, stream.duration_ps, size=n)
    merged = np.sort(np.concatenate((stream.times_ps, bg)), kind="stable")
    merged = _strictly_increasing(merged)
    return EmissionStream(merged[merged < stream.duration_ps], stream.duration_ps, stream.seed)


def dead_time_filter(times_ps: np.ndarray, dead_ps: int, max_rounds: int = 64) -> np.ndarray:
    """Non-paralyzable dead time on one sorted channel; returns the kept timestamps.

    A click survives iff it comes at least `dead_ps` after the previous
    surviving click. Vectorized rounds settle the usual short clusters;
    long chains fall back to a jump scan.
    """
    t = np.asarray(times_ps, dtype=np.int64)
    if dead_ps <= 0 or t.size < 2:
        return t.copy()
    for _ in range(max_rounds):
        viol = np.concatenate(([False], np.diff(t) < dead_ps))
        if not viol.any():
            return t
        # a non-violating click is kept for good; the click right after it
        # is then certainly lost if too close
        drop = viol & ~np.concatenate(([True], viol[:-1]))
        t = t[~drop]
    kept = []
    i = 0
    while i < t.size:
        kept.append(i)
        i = int(np.searchsorted(t, t[i] + dead_ps, side="left"))
    return t[np.asarray(kept, dtype=np.int64)]


def detect(stream: EmissionStream, apparatus: ApparatusParams, seed: int) -> TagStream:
    """Split, thin by detector efficiency, apply dead time; returns time-sorted tags."""
    rng = np.random.default_rng(seed)
    to_b = rng.random(len(stream)) >= apparatus.t
    eff = np.where(to_b, apparatus.eta_b, apparatus.eta_a)
    seen = rng.random(len(stream)) < eff
    out_t, out_c = [], []
    for ch, dead_ns in ((0, apparatus.tau_dead_a), (1, apparatus.tau_dead_b)):
        mask = seen & (to_b == bool(ch))
        t = dead_time_filter(stream.times_ps[mask], int(round(dead_ns * PS_PER_NS)))
        out_t.append(t)
        out_c.append(np.full(t.size, ch, dtype=np.uint8))
    t = np.concatenate(out_t)
    c = np.concatenate(out_c)
    order = np.argsort(t, kind="stable")
    return TagStream(c[order], t[order], stream.duration_ps)


@dataclass(frozen=True)
class SourcePlan:
    """Photon budget of a simulated source feeding the splitter."""

    rates: ThreeLevelRates
    keep: float  # collected fraction of emitted photons
    emitter_rate: float  # collected emitter photons, s^-1
    background_rate: float  # collected background photons, s^-1


def plan_source(power: float, apparatus: ApparatusParams, model: PowerModel = PowerModel()) -> SourcePlan:
    """Collection efficiency chosen so the splitter sees `apparatus.i_in` photons/s."""
    emitted, total, _ = fluorescence_rates(power, model)
    if total <= 0:
        raise ValueError("source emits nothing at zero power")
    keep = apparatus.i_in / total
    if not 0 < keep <= 1:
        raise ValueError(f"incident rate {apparatus.i_in} not reachable from {total:.4g} s^-1")
    return SourcePlan(rates_from_power(power, model), keep, emitted * keep, (total - emitted) * keep)


def simulate_source(
    power: float,
    apparatus: ApparatusParams,
    duration_s: float,
    seed: int,
    model: PowerModel = PowerModel(),
) -> TagStream:
    """Emitter plus background through the apparatus, seeded from a single value."""
    plan = plan_source(power, apparatus, model)
    s_emit, s_bg, s_det = np.random.SeedSequence(seed).spawn(3)
    duration_ps = int(round(duration_s * PS_PER_S))
    stream = simulate_emitter(plan.rates, duration_ps, _seed_int(s_emit), keep=plan.keep)
    stream = merge_background(stream, plan.background_rate, _seed_int(s_bg))
    return detect(stream, apparatus, _seed_int(s_det))


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(2, np.uint64).view(np.uint64)[0])
