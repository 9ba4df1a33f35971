"""Conditional min-entropy of the raw bits under three source models.

Model 1 treats every click as a bit. Model 2 attributes a share p_e of
the bits, set by g2(0), to an adversary. Model 3 keeps only start-stop
pairs below the classical line and treats the rest (share p_c) as known.

Dead-time window integrals enter the conditional probabilities in
seconds, as plain numbers; at the reference rates they shift the
probabilities by parts in 1e8.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfcinv

from .apparatus import PARAMETERS, ApparatusParams, ParamSigmas, analytic_click_rates, dead_window
from .extract import extractable_bits
from .g2 import G2Model, NoCrossingError, classical_crossing, g2_integral
from .tags import RawBits

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 2.0**-100

# The splitter is varied through t with r held at its nominal value.
ENTROPY_PARAMETERS = ("t", "eta_a", "eta_b", "tau_dead_a", "tau_dead_b", "i_in")


class ModelInconsistencyError(ValueError):
    """A raw probability fell outside [0, 1] before normalization."""


@dataclass(frozen=True)
class ProbTable:
    """Outcome probabilities of the raw bit stream; A is 0, B is 1."""

    p_a: float
    p_b: float
    p_a_given_a: float
    p_b_given_a: float
    p_a_given_b: float
    p_b_given_b: float

    def __post_init__(self):
        vals = asdict(self).values()
        if any(not -1e-12 <= v <= 1 + 1e-12 for v in vals):
            raise ValueError(f"probabilities must lie in [0, 1]: {self}")
        for s, what in (
            (self.p_a + self.p_b, "p_a + p_b"),
            (self.p_a_given_a + self.p_b_given_a, "row A"),
            (self.p_a_given_b + self.p_b_given_b, "row B"),
        ):
            if abs(s - 1.0) > 1e-9:
                raise ValueError(f"{what} sums to {s}, not 1")

    @property
    def p_ab(self) -> float:
        """Joint probability of A followed by B."""
        return self.p_a * self.p_b_given_a

    @property
    def p_ba(self) -> float:
        return self.p_b * self.p_a_given_b

    @classmethod
    def independent(cls, p_a: float) -> "ProbTable":
        p_b = 1.0 - p_a
        return cls(p_a, p_b, p_a, p_b, p_a, p_b)


def _row(pa: float, pb: float) -> tuple[float, float]:
    for v in (pa, pb):
        if v < -1e-3 or v > 1 + 1e-3:
            raise ModelInconsistencyError(f"raw conditional {v} outside [0, 1]")
    s = pa + pb
    if s <= 0:
        raise ModelInconsistencyError("conditional row has zero weight")
    return pa / s, pb / s


def click_fraction_b(apparatus: ApparatusParams, g2: G2Model) -> float:
    ra, rb = analytic_click_rates(apparatus, g2)
    if ra + rb <= 0:
        raise ModelInconsistencyError("no clicks: incident rate is zero")
    return rb / (ra + rb)


def probs_from_params(apparatus: ApparatusParams, g2: G2Model) -> ProbTable:
    """Probability table from the apparatus and the anti-bunching curve.

    Unconditional probabilities follow the dead-time-corrected click
    rates. Each conditional row multiplies the splitter-and-efficiency
    weight by the chance that the detector is still live, then is
    normalized to sum to one.
    """
    p_b = click_fraction_b(apparatus, g2)
    p_a = 1.0 - p_b
    xa = apparatus.eta_a * apparatus.t
    xb = apparatus.eta_b * apparatus.r
    wa, wb = dead_window(g2, apparatus.tau_dead_a), dead_window(g2, apparatus.tau_dead_b)
    ha, hb = dead_window(g2, apparatus.tau_dead_a / 2), dead_window(g2, apparatus.tau_dead_b / 2)
    aa, ba = _row((1.0 - wa) * xa, xb * (1.0 - xb * hb * hb))
    ab, bb = _row(xa * (1.0 - xa * ha * ha), (1.0 - wb) * xb)
    return ProbTable(p_a, p_b, aa, ba, ab, bb)


@dataclass(frozen=True)
class TupleCounts:
    n00: int
    n01: int
    n10: int
    n11: int

    @property
    def n0(self) -> int:
        return self.n00 + self.n01

    @property
    def n1(self) -> int:
        return self.n10 + self.n11

    @property
    def total(self) -> int:
        return self.n0 + self.n1

    def __add__(self, other: "TupleCounts") -> "TupleCounts":
        return TupleCounts(
            self.n00 + other.n00, self.n01 + other.n01, self.n10 + other.n10, self.n11 + other.n11
        )

    def table(self) -> ProbTable:
        n = self.total
        row0 = (self.n00 / self.n0, self.n01 / self.n0) if self.n0 else (0.5, 0.5)
        row1 = (self.n10 / self.n1, self.n11 / self.n1) if self.n1 else (0.5, 0.5)
        return ProbTable(self.n0 / n, self.n1 / n, row0[0], row0[1], row1[0], row1[1])


def tuple_frequencies(bits: RawBits) -> TupleCounts:
    """Counts of overlapping pairs (x_i, x_{i+1}), closing the ring with (last, first)."""
    b = bits.bits
    if len(b) < 2:
        raise ValueError("need at least two bits to count tuples")
    code = 2 * b.astype(np.int64) + np.roll(b, -1)
    c = np.bincount(code, minlength=4)
    return TupleCounts(int(c[0]), int(c[1]), int(c[2]), int(c[3]))


def dominant_term(pt: ProbTable) -> tuple[float, str]:
    """Guessing probability f(p) and the branch that attains it.

    With p(AB) = p(BA) the sum over y of p(y) max_x p(x|y) collapses to
    one of p(A), p(B), 2 p(AB), 1 - 2 p(AB).
    """
    pa, pab = pt.p_a, pt.p_ab
    stay_a = pa - pab >= pab
    stay_b = 1.0 - pa - pab >= pab
    if stay_a and not stay_b:
        return pa, "p_a"
    if stay_b and not stay_a:
        return 1.0 - pa, "p_b"
    if not stay_a and not stay_b:
        return 2.0 * pab, "2p_ab"
    return 1.0 - 2.0 * pab, "1-2p_ab"


def minentropy(pt: ProbTable) -> float:
    f, _ = dominant_term(pt)
    return _neg_log2(f)


def _neg_log2(p: float) -> float:
    if p >= 1.0:
        return 0.0
    return -math.log2(p)


def conservative_minentropy(f_p: float, delta: float, k_sigma: float) -> float:
    """-log2(f + k * delta), or zero when the bound reaches certainty."""
    g = f_p + k_sigma * delta
    if g >= 1.0:
        log.info("f + k*delta = %.6g >= 1: no extractable entropy", g)
        return 0.0
    return -math.log2(g)


def sigma_multiplier(epsilon: float) -> float:
    """k such that a two-sided Gaussian tail beyond +-k sigma has probability epsilon."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return math.sqrt(2.0) * float(erfcinv(epsilon))


def _k(epsilon: float, k_sigma: float | None) -> float:
    return sigma_multiplier(epsilon) if k_sigma is None else float(k_sigma)


def _fd_step(value: float) -> float:
    return max(1e-6, 1e-4 * abs(value))


def propagate_sigma(
    quantity: Callable[[ApparatusParams], float],
    apparatus: ApparatusParams,
    sigmas: ParamSigmas,
    parameters: Sequence[str] = ENTROPY_PARAMETERS,
) -> float:
    """Quadrature sum of central-difference partials times the parameter sigmas."""
    total = 0.0
    for name in parameters:
        if name not in PARAMETERS:
            raise KeyError(name)
        sigma = sigmas.for_parameter(name)
        if sigma == 0:
            continue
        x0 = getattr(apparatus, name)
        h = _fd_step(x0)
        up = quantity(apparatus.perturbed(name, x0 + h))
        down = quantity(apparatus.perturbed(name, x0 - h))
        d = (up - down) / (2 * h)
        if not math.isfinite(d):
            raise FloatingPointError(f"non-finite partial derivative in {name}")
        total += (d * sigma) ** 2
    return math.sqrt(total)


@dataclass(frozen=True)
class EveFraction:
    p_e: float
    delta_p_e: float


def eve_fraction(g2_0: float, delta_g2_0: float = 0.0) -> EveFraction:
    """p_e = 1 - sqrt(1 - g2(0)); every bit is known once g2(0) >= 1."""
    if g2_0 >= 1.0:
        return EveFraction(1.0, 0.0)
    g = max(g2_0, 0.0)
    s = math.sqrt(1.0 - g)
    return EveFraction(1.0 - s, delta_g2_0 / (2.0 * s))


@dataclass(frozen=True)
class ClassicalFraction:
    p_c: float
    r_rand: float  # s^-1
    r_total: float  # s^-1
    delta_p_cq: float = 0.0


def random_rate(apparatus: ApparatusParams, g2: G2Model, t: float | None = None) -> float:
    """Start-stop rate (s^-1) of single-photon pairs below the classical line.

    Raises NoCrossingError when the curve never returns to 1.
    """
    if t is None:
        t = classical_crossing(g2)
    ra, rb = analytic_click_rates(apparatus, g2)
    area = g2_integral(g2, -t, t) * 1e-9
    return (1.0 - g2.g2_0) * ra * rb * area


def classical_fraction(apparatus: ApparatusParams, g2: G2Model, t: float | None = None) -> ClassicalFraction:
    ra, rb = analytic_click_rates(apparatus, g2)
    total = ra + rb
    r = random_rate(apparatus, g2, t)
    return ClassicalFraction(1.0 - r / total, r, total)


def bold_bit_probs(apparatus: ApparatusParams, g2: G2Model, t: float) -> tuple[float, float]:
    """Normalized p(AB), p(BA) for start-stop pairs closer than t (ns).

    Each stop detector is in the short-window regime when t is below half
    its own dead time.
    """
    p_b = click_fraction_b(apparatus, g2)
    p_a = 1.0 - p_b
    w_t = dead_window(g2, t)

    def stop(start_p: float, x: float, tau_dead: float) -> float:
        half = dead_window(g2, tau_dead / 2)
        if t < tau_dead / 2:
            return start_p * x * w_t * (1.0 - x * half)
        return start_p * x * (w_t - x * half * half)

    z = stop(p_a, apparatus.eta_b * apparatus.r, apparatus.tau_dead_b)
    o = stop(p_b, apparatus.eta_a * apparatus.t, apparatus.tau_dead_a)
    if z < 0 or o < 0 or z + o <= 0:
        raise ModelInconsistencyError(f"bold-bit weights ({z}, {o}) are not a distribution")
    return z / (z + o), o / (z + o)


@dataclass
class EntropyReport:
    model: int
    source: str  # "parametric" or "empirical"
    p_a: float
    p_b: float
    p_ab: float
    f_p: float
    branch: str
    p_guess: float  # f_p folded with p_e or p_c
    h_raw: float
    delta: float  # 1 sigma of p_guess
    k_sigma: float
    h_conservative: float
    epsilon: float
    n_raw: int = 0
    duration_s: float = 0.0
    extractable_bits: int = 0
    rate_bps: float = 0.0
    p_e: float | None = None
    p_c: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.h_conservative > self.h_raw + 1e-15:
            raise ValueError("conservative entropy exceeds the raw estimate")
        self.attach_extraction(self.n_raw, self.duration_s)

    def attach_extraction(self, n_raw: int, duration_s: float) -> "EntropyReport":
        """Fill extractable bits and output rate for n_raw bits collected over duration_s."""
        self.n_raw = int(n_raw)
        self.duration_s = float(duration_s)
        if self.n_raw > 0:
            self.extractable_bits = extractable_bits(self.n_raw, self.h_conservative, self.epsilon)
        else:
            self.extractable_bits = 0
        self.rate_bps = self.extractable_bits / self.duration_s if self.duration_s > 0 else 0.0
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _report(model, source, pt: ProbTable, p_guess, delta, k_sigma, epsilon, **kw) -> EntropyReport:
    f, branch = dominant_term(pt)
    return EntropyReport(
        model=model,
        source=source,
        p_a=pt.p_a,
        p_b=pt.p_b,
        p_ab=pt.p_ab,
        f_p=f,
        branch=branch,
        p_guess=p_guess,
        h_raw=_neg_log2(p_guess),
        delta=delta,
        k_sigma=k_sigma,
        h_conservative=conservative_minentropy(p_guess, delta, k_sigma),
        epsilon=epsilon,
        **kw,
    )


def model1_entropy(
    apparatus: ApparatusParams,
    g2: G2Model,
    sigmas: ParamSigmas,
    epsilon: float = DEFAULT_EPSILON,
    k_sigma: float | None = None,
) -> EntropyReport:
    pt = probs_from_params(apparatus, g2)
    k = _k(epsilon, k_sigma)
    delta = _delta_f(apparatus, g2, sigmas, pt)
    f, _ = dominant_term(pt)
    return _report(1, "parametric", pt, f, delta, k, epsilon)


def _delta_f(apparatus, g2, sigmas, pt) -> float:
    _, branch = dominant_term(pt)

    def f_of(app: ApparatusParams) -> float:
        return _branch_value(probs_from_params(app, g2), branch)

    return propagate_sigma(f_of, apparatus, sigmas)


def _branch_value(pt: ProbTable, branch: str) -> float:
    # hold the branch fixed so partial derivatives stay smooth
    return {
        "p_a": pt.p_a,
        "p_b": pt.p_b,
        "2p_ab": 2 * pt.p_ab,
        "1-2p_ab": 1 - 2 * pt.p_ab,
    }[branch]


def model2_combine(f_p: float, delta_f: float, eve: EveFraction) -> tuple[float, float]:
    """p_eq = p_e + (1 - p_e) f and its 1 sigma from the two independent inputs."""
    p_eq = eve.p_e + (1.0 - eve.p_e) * f_p
    d = math.hypot((1.0 - f_p) * eve.delta_p_e, (1.0 - eve.p_e) * delta_f)
    return p_eq, d


def model2_entropy(
    pt: ProbTable,
    g2_0: float,
    delta_g2_0: float,
    delta_f: float,
    epsilon: float = DEFAULT_EPSILON,
    k_sigma: float | None = None,
) -> EntropyReport:
    """Model 2 from a probability table, g2(0) with its sigma, and the sigma of f(p)."""
    k = _k(epsilon, k_sigma)
    eve = eve_fraction(g2_0, delta_g2_0)
    f, _ = dominant_term(pt)
    p_eq, d = model2_combine(f, delta_f, eve)
    return _report(
        2, "parametric", pt, p_eq, d, k, epsilon, p_e=eve.p_e,
        extra={"delta_p_e": eve.delta_p_e, "delta_f": delta_f, "g2_0": g2_0},
    )


def _p_cq(apparatus: ApparatusParams, g2: G2Model, t: float) -> float:
    cf = classical_fraction(apparatus, g2, t)
    p0, _ = bold_bit_probs(apparatus, g2, t)
    f, _ = dominant_term(ProbTable.independent(p0))
    return cf.p_c + (1.0 - cf.p_c) * f


def _zero_report(model: int, epsilon: float, k: float, **kw) -> EntropyReport:
    return EntropyReport(
        model=model, source="parametric", p_a=float("nan"), p_b=float("nan"), p_ab=float("nan"),
        f_p=1.0, branch="none", p_guess=1.0, h_raw=0.0, delta=0.0, k_sigma=k,
        h_conservative=0.0, epsilon=epsilon, **kw,
    )


def model3_entropy(
    apparatus: ApparatusParams,
    g2: G2Model,
    sigmas: ParamSigmas,
    delta_1: float = 0.0,
    epsilon: float = DEFAULT_EPSILON,
    include_crossing_shift: bool = False,
    k_sigma: float | None = None,
) -> EntropyReport:
    """Model 3: bold bits from start-stop pairs inside the classical-line crossing.

    The sigma of p_cq = p_c + (1 - p_c) f(bold) is propagated directly over
    the apparatus parameters. With `include_crossing_shift` the shift of
    the crossing caused by lowering the classical line by k * delta_1 is
    added in quadrature as one more input.
    """
    k = _k(epsilon, k_sigma)
    try:
        t = classical_crossing(g2)
    except NoCrossingError as exc:
        log.info("no classical crossing (%s): model 3 yields nothing", exc)
        return _zero_report(3, epsilon, k, p_c=1.0, extra={"reason": str(exc)})
    if t == 0:
        return _zero_report(3, epsilon, k, p_c=1.0, extra={"reason": "crossing at zero delay"})
    cf = classical_fraction(apparatus, g2, t)
    p0, p1 = bold_bit_probs(apparatus, g2, t)
    bold = ProbTable.independent(p0)
    p_cq = _p_cq(apparatus, g2, t)
    delta = propagate_sigma(lambda app: _p_cq(app, g2, t), apparatus, sigmas)

    from .correlate import crossing_shift

    shift = crossing_shift(g2, delta_1) if delta_1 > 0 else 0.0
    if include_crossing_shift and shift > 0:
        h = _fd_step(t)
        dpdt = (_p_cq(apparatus, g2, t + h) - _p_cq(apparatus, g2, t - h)) / (2 * h)
        delta = math.hypot(delta, dpdt * shift)
    return _report(
        3, "parametric", bold, p_cq, delta, k, epsilon, p_c=cf.p_c,
        extra={
            "t_cross_ns": t,
            "crossing_shift_ns": shift,
            "crossing_shift_included": include_crossing_shift,
            "r_rand": cf.r_rand,
            "r_total": cf.r_total,
            "p_bold_0": p0,
            "p_bold_1": p1,
        },
    )


@dataclass(frozen=True)
class EmpiricalContext:
    """Side information the empirical estimates borrow from the parametric models."""

    epsilon: float = DEFAULT_EPSILON
    p_e: float = 0.0
    delta_p_e: float = 0.0
    p_c: float = 0.0
    delta_p_c: float = 0.0
    n_raw: int = 0  # raw clicks, used to size extraction
    duration_s: float = 0.0
    k_sigma: float | None = None


def empirical_entropy(bits: RawBits, model: int, context: EmpiricalContext = EmpiricalContext()) -> EntropyReport:
    """Entropy from observed tuple frequencies.

    For model 3 `bits` are the bold bits. The sigma of f is its binomial
    standard error over the observed bits.
    """
    counts = tuple_frequencies(bits)
    pt = counts.table()
    f, _ = dominant_term(pt)
    n = counts.total
    delta_f = math.sqrt(max(f * (1.0 - f), 0.0) / n)
    k = _k(context.epsilon, context.k_sigma)
    n_raw = context.n_raw or n
    if model == 1:
        p, d, kw = f, delta_f, {}
    elif model == 2:
        eve = EveFraction(context.p_e, context.delta_p_e)
        p, d = model2_combine(f, delta_f, eve)
        kw = {"p_e": context.p_e}
    elif model == 3:
        pc = context.p_c
        p = pc + (1.0 - pc) * f
        d = math.hypot((1.0 - f) * context.delta_p_c, (1.0 - pc) * delta_f)
        kw = {"p_c": pc}
    else:
        raise ValueError(f"unknown model {model}")
    rep = _report(
        model, "empirical", pt, p, d, k, context.epsilon,
        extra={"counts": asdict(counts), "p_ba": pt.p_ba}, **kw,
    )
    return rep.attach_extraction(n_raw, context.duration_s)


@dataclass(frozen=True)
class ParametricResult:
    reports: list  # EntropyReport for models 1, 2, 3
    norm: object  # NormUncertainty


def parametric_reports(
    apparatus: ApparatusParams,
    g2: G2Model,
    sigmas: ParamSigmas,
    epsilon: float = DEFAULT_EPSILON,
    n_raw: int = 0,
    duration_s: float = 0.0,
    include_crossing_shift: bool = False,
    k_sigma: float | None = None,
) -> ParametricResult:
    """All three parametric models from one apparatus and g2."""
    from .correlate import norm_uncertainty

    norm = norm_uncertainty(apparatus, sigmas, g2)
    r1 = model1_entropy(apparatus, g2, sigmas, epsilon, k_sigma)
    r2 = model2_entropy(
        probs_from_params(apparatus, g2), g2.g2_0, norm.delta_g2_0, r1.delta, epsilon, k_sigma
    )
    r3 = model3_entropy(
        apparatus, g2, sigmas, norm.delta_1, epsilon, include_crossing_shift, k_sigma
    )
    reports = [r.attach_extraction(n_raw, duration_s) for r in (r1, r2, r3)]
    return ParametricResult(reports, norm)
