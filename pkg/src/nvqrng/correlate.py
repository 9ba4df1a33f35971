"""Cross-correlation histograms, normalization and the bi-exponential fit."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .apparatus import ApparatusParams, ParamSigmas, analytic_click_rates
from .g2 import G2Model, NoCrossingError, classical_crossing, g2_integral  # noqa: F401
from .tags import TagStream

DEFAULT_BIN_PS = 500
DEFAULT_MAX_LAG_NS = 1500.0


class NormalizationError(ValueError):
    """Singles rates or integration time are zero."""


class FitError(RuntimeError):
    def __init__(self, message: str, last: G2Model | None = None, params=None):
        super().__init__(message)
        self.last = last
        self.params = params


@dataclass
class G2Histogram:
    """Coincidence counts of B relative to A; lag = t_B - t_A."""

    bin_ps: int
    max_lag_ns: float
    counts: np.ndarray
    t_total_s: float
    rate_a: float
    rate_b: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n_bins = int(round(2 * self.max_lag_ns * 1000 / self.bin_ps))
        if self.counts.shape != (n_bins,):
            raise ValueError(f"expected {n_bins} bins, got {self.counts.shape}")

    @property
    def is_empty(self) -> bool:
        return self.t_total_s == 0

    @property
    def tau_ns(self) -> np.ndarray:
        """Bin centres in ns."""
        n = len(self.counts)
        return (np.arange(n) + 0.5) * self.bin_ps / 1000 - self.max_lag_ns

    @property
    def n_norm(self) -> float:
        return self.rate_a * self.rate_b * self.bin_ps * 1e-12 * self.t_total_s

    def merge(self, other: "G2Histogram") -> "G2Histogram":
        """Combine histograms of disjoint stretches of data."""
        if (self.bin_ps, self.max_lag_ns) != (other.bin_ps, other.max_lag_ns):
            raise ValueError("histograms have different binning")
        t = self.t_total_s + other.t_total_s
        if t == 0:
            return self
        ra = (self.rate_a * self.t_total_s + other.rate_a * other.t_total_s) / t
        rb = (self.rate_b * self.t_total_s + other.rate_b * other.t_total_s) / t
        return G2Histogram(self.bin_ps, self.max_lag_ns, self.counts + other.counts, t, ra, rb)


def _empty_histogram(bin_ps: int, max_lag_ns: float) -> G2Histogram:
    n_bins = int(round(2 * max_lag_ns * 1000 / bin_ps))
    return G2Histogram(bin_ps, max_lag_ns, np.zeros(n_bins, np.int64), 0.0, 0.0, 0.0)


def g2_histogram(
    stream: TagStream,
    bin_ps: int = DEFAULT_BIN_PS,
    max_lag_ns: float = DEFAULT_MAX_LAG_NS,
    chunk: int = 1 << 18,
) -> G2Histogram:
    """Start-multiple-stop histogram: every A click against all B clicks within +-max_lag."""
    if bin_ps <= 0:
        raise ValueError("bin width must be positive")
    lag_ps = int(round(max_lag_ns * 1000))
    if lag_ps < bin_ps or lag_ps % bin_ps:
        raise ValueError("max_lag must be a positive multiple of the bin width")
    if len(stream) == 0:
        return _empty_histogram(bin_ps, max_lag_ns)
    ta = stream.channel_times(0)
    tb = stream.channel_times(1)
    n_bins = 2 * lag_ps // bin_ps
    counts = np.zeros(n_bins, dtype=np.int64)
    for s in range(0, len(ta), chunk):
        a = ta[s : s + chunk]
        lo = np.searchsorted(tb, a - lag_ps, side="left")
        hi = np.searchsorted(tb, a + lag_ps, side="left")
        n = hi - lo
        total = int(n.sum())
        if total == 0:
            continue
        start = np.repeat(a, n)
        # index of each stop within tb: lo of its start plus its offset in the run
        offs = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        lag = tb[np.repeat(lo, n) + offs] - start
        counts += np.bincount((lag + lag_ps) // bin_ps, minlength=n_bins)[:n_bins]
    span = stream.span_s
    ra, rb = stream.singles_rates()
    return G2Histogram(bin_ps, max_lag_ns, counts, span, ra, rb)


@dataclass
class G2Curve:
    tau_ns: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray
    n_norm: float = 0.0

    def __len__(self) -> int:
        return len(self.tau_ns)


def normalize(hist: G2Histogram) -> G2Curve:
    n_norm = hist.n_norm
    if not n_norm > 0:
        raise NormalizationError(
            f"cannot normalize: r_A={hist.rate_a}, r_B={hist.rate_b}, T={hist.t_total_s}"
        )
    c = hist.counts.astype(float)
    return G2Curve(hist.tau_ns, c / n_norm, np.sqrt(np.maximum(c, 1.0)) / n_norm, n_norm)


CURVE_HEADER = ("tau_ns", "g2", "sigma")


def write_curve_csv(curve: G2Curve, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for row in zip(curve.tau_ns.tolist(), curve.g2.tolist(), curve.sigma.tolist()):
        w.writerow([repr(v) for v in row])


def read_curve_csv(fh) -> G2Curve:
    reader = csv.reader(fh)
    header = next(reader)
    if tuple(header) != CURVE_HEADER:
        raise ValueError(f"unexpected curve header {header}")
    data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, 3)
    g, sig = data[:, 1], data[:, 2]
    return G2Curve(data[:, 0], g, sig, _count_scale(g, sig))


def _count_scale(g2: np.ndarray, sigma: np.ndarray) -> float:
    """Recover N_norm from a curve written by normalize, else 0.

    normalize sets sigma = sqrt(max(c, 1)) / N and g2 = c / N, so N is
    g2 / sigma^2 where c >= 1 and 1 / sigma where c = 0.
    """
    if g2.size == 0 or np.any(sigma <= 0):
        return 0.0
    est = np.where(g2 > 0, g2 / sigma**2, 1.0 / sigma)
    n = float(np.median(est))
    counts = g2 * n
    if not (np.allclose(est, n, rtol=1e-6) and np.allclose(counts, np.round(counts), atol=1e-6 * max(n, 1))):
        return 0.0
    return n


@dataclass(frozen=True)
class G2Fit:
    model: G2Model
    stderr: dict
    residual: float  # Poisson deviance, or chi-square without a count scale
    iterations: int

    @property
    def g2_0(self) -> float:
        return self.model.g2_0

    @property
    def g2_0_stderr(self) -> float:
        return self.stderr["g2_0"]


def _model_and_jacobian(p: np.ndarray, x: np.ndarray):
    a, l1, b, l2 = p
    e1 = np.exp(-l1 * x)
    e2 = np.exp(-l2 * x)
    f = 1.0 - a * e1 + b * e2
    jac = np.column_stack((-e1, a * x * e1, e2, -b * x * e2))
    return f, jac


def _initial_guess(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    order = np.argsort(x)
    x, y = x[order], y[order]
    core = x <= max(x[min(2, len(x) - 1)], 1.0)
    g0 = float(np.clip(np.mean(y[core]), 0.0, 2.0))
    far = x >= np.quantile(x, 0.5)
    excess_far = max(float(np.mean(y[far]) - 1.0), 0.0)
    # dip rate from where the curve recovers 1 - 1/e of its depth
    target = g0 + (1.0 - g0) * (1.0 - math.exp(-1.0))
    above = np.flatnonzero(y >= target)
    x_e = x[above[0]] if above.size and x[above[0]] > 0 else max(x[-1] / 20, 1e-3)
    l1 = 1.0 / x_e
    # tail decay from the excess at a quarter and half of the range
    mid = (x >= np.quantile(x, 0.2)) & (x <= np.quantile(x, 0.3))
    excess_mid = float(np.mean(y[mid]) - 1.0) if mid.any() else 0.0
    x_mid = float(np.mean(x[mid])) if mid.any() else x[-1] / 4
    x_far = float(np.mean(x[far]))
    if excess_mid > 0 and excess_far > 0 and excess_mid > excess_far:
        l2 = math.log(excess_mid / excess_far) / (x_far - x_mid)
    else:
        l2 = l1 / 20
    l2 = min(l2, l1 / 2)
    b = max(excess_mid * math.exp(l2 * x_mid), 0.0) if excess_mid > 0 else 0.01
    a = max(1.0 - g0 + b, 1e-3)
    return np.array([a, l1, b, l2])


AMPLITUDE_MAX = 10.0
RATE_SEPARATION = 2.0  # l1 / l2 at least this, so the two decays stay distinguishable
RATE_MIN = 1e-9  # ns^-1


class _WeightedLeastSquares:
    def __init__(self, y, w):
        self.y, self.w = y, w

    def cost(self, f):
        return float(np.sum(((self.y - f) * self.w) ** 2))

    def normal_equations(self, f, jac):
        # descent direction and curvature of cost / 2
        jw = jac * self.w[:, None]
        return jw.T @ ((self.y - f) * self.w), jw.T @ jw


class _PoissonDeviance:
    """Counts y * n with mean f * n; minimizing the deviance is maximum likelihood."""

    def __init__(self, y, n):
        self.y, self.n = y, n

    def cost(self, f):
        if np.any(f <= 0):
            return math.inf
        y = self.y
        pos = y > 0
        return float(2 * self.n * (np.sum(y[pos] * np.log(y[pos] / f[pos])) - np.sum(y - f)))

    def normal_equations(self, f, jac):
        f = np.maximum(f, 1e-300)
        jw = jac * np.sqrt(self.n / f)[:, None]
        return jac.T @ (self.n * (self.y / f - 1.0)), jw.T @ jw


def _clamp(q: np.ndarray, l1_max: float) -> np.ndarray:
    q[2] = min(max(q[2], 0.0), AMPLITUDE_MAX)
    q[0] = min(max(q[0], q[2]), 1.0 + q[2])
    q[1] = min(max(q[1], RATE_MIN * RATE_SEPARATION), l1_max)
    q[3] = min(max(q[3], RATE_MIN), q[1] / RATE_SEPARATION)
    return q


def _projected_step(p, g, curv, damping, lam, l1_max):
    """Damped step that freezes parameters already pinned at a bound and pushed outward."""
    free = np.ones(4, dtype=bool)
    for _ in range(4):
        a = (curv + lam * damping)[np.ix_(free, free)]
        delta = np.zeros(4)
        delta[free] = np.linalg.lstsq(a, g[free], rcond=None)[0]
        raw = p + delta
        q = _clamp(raw.copy(), l1_max)
        pinned = free & (q != raw) & (np.abs(q - p) <= 1e-12 * np.maximum(np.abs(p), 1e-12))
        if not pinned.any():
            return q
        free &= ~pinned
        if not free.any():
            return p.copy()
    return q


def fit_g2(
    curve: G2Curve,
    initial: G2Model | None = None,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> G2Fit:
    """Levenberg-Marquardt fit of 1 - a e^{-l1|tau|} + b e^{-l2|tau|}.

    With a known count scale (curve.n_norm > 0) the fit maximizes the
    Poisson likelihood of the underlying counts; weighting by the observed
    counts instead would pull the level down by about one count per bin.
    Otherwise it is a least-squares fit weighted by sigma, or uniformly
    when any sigma is zero.

    Iterates are kept inside 0 <= a - b <= 1 (a dip no deeper than zero),
    b <= AMPLITUDE_MAX, l1 >= RATE_SEPARATION * l2 and l1 <= 2 / (bin
    spacing), the fastest resolvable decay. Without these a flat curve
    lets a and b run away together.
    """
    x = np.abs(np.asarray(curve.tau_ns, dtype=float))
    y = np.asarray(curve.g2, dtype=float)
    if len(x) < 4:
        raise ValueError("need at least 4 bins to fit 4 parameters")
    sig = np.asarray(curve.sigma, dtype=float)
    weighted = bool(np.all(sig > 0))
    if curve.n_norm > 0:
        obj = _PoissonDeviance(y, curve.n_norm)
    else:
        obj = _WeightedLeastSquares(y, 1.0 / sig if weighted else np.ones_like(y))
    spacing = np.diff(np.unique(x))
    l1_max = 2.0 / float(spacing.min()) if spacing.size else np.inf
    p = (
        np.array([initial.a, initial.lambda1, initial.b, initial.lambda2], dtype=float)
        if initial is not None
        else _initial_guess(x, y)
    )
    p = _clamp(p, l1_max)

    def cost_of(q):
        return obj.cost(_model_and_jacobian(q, x)[0])

    lam = 1e-3
    cost = cost_of(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        f, jac = _model_and_jacobian(p, x)
        g, curv = obj.normal_equations(f, jac)
        damping = np.diag(np.diag(curv)) + 1e-12 * np.trace(curv) * np.eye(4)
        for _ in range(60):
            q = _projected_step(p, g, curv, damping, lam, l1_max)
            new = cost_of(q)
            if new <= cost:
                break
            lam *= 4
        else:
            converged = True  # no downhill step left
            break
        drop = cost - new
        small_step = np.all(np.abs(q - p) <= 1e-10 * np.maximum(np.abs(p), 1e-12))
        p, cost = q, new
        lam = max(lam / 3, 1e-15)
        if drop <= tol * max(cost, 1e-300) or small_step or cost < 1e-28:
            converged = True
            break
    if not converged:
        raise FitError(f"fit did not converge in {max_iter} iterations", _safe_model(p), p)
    model = _safe_model(p)
    if model is None:
        raise FitError(f"fit ended at invalid parameters {p}", None, p)
    f, jac = _model_and_jacobian(p, x)
    _, curv = obj.normal_equations(f, jac)
    cov = np.linalg.pinv(curv)
    if not weighted and curve.n_norm <= 0:
        cov = cov * cost / max(len(x) - 4, 1)  # unweighted: scale by residual variance
    var = np.diag(cov)
    stderr = {
        "a": math.sqrt(max(var[0], 0.0)),
        "lambda1": math.sqrt(max(var[1], 0.0)),
        "b": math.sqrt(max(var[2], 0.0)),
        "lambda2": math.sqrt(max(var[3], 0.0)),
        "g2_0": math.sqrt(max(var[0] + var[2] - 2 * cov[0, 2], 0.0)),
    }
    return G2Fit(model, stderr, cost, it)


def _safe_model(p) -> G2Model | None:
    try:
        return G2Model(float(p[0]), float(p[1]), float(p[2]), float(p[3]))
    except ValueError:
        return None


@dataclass(frozen=True)
class NormUncertainty:
    delta_norm: float  # counts
    delta_1: float  # relative uncertainty of the classical line
    delta_g2_0: float
    n_norm: float = field(default=0.0)


def _norm_product(apparatus: ApparatusParams, g2: G2Model) -> float:
    ra, rb = analytic_click_rates(apparatus, g2)
    return ra * rb


# N_norm carries the splitter uncertainty through R with T held fixed.
NORM_PARAMETERS = ("r", "eta_a", "eta_b", "tau_dead_a", "tau_dead_b", "i_in")


def norm_uncertainty(
    apparatus: ApparatusParams,
    sigmas: ParamSigmas,
    g2: G2Model,
    bin_ps: int = DEFAULT_BIN_PS,
    t_total_s: float = 1.0,
) -> NormUncertainty:
    """Propagate apparatus uncertainties into N_norm = r_A r_B tau_rs T_total.

    Delta_1 = Delta_norm / N_norm does not depend on the bin width or the
    integration time, which only scale both numerator and denominator.
    """
    from .entropy import propagate_sigma

    scale = bin_ps * 1e-12 * t_total_s
    n_norm = _norm_product(apparatus, g2) * scale
    delta = propagate_sigma(
        lambda app: _norm_product(app, g2) * scale, apparatus, sigmas, parameters=NORM_PARAMETERS
    )
    d1 = delta / n_norm if n_norm > 0 else 0.0
    return NormUncertainty(delta, d1, g2.g2_0 * d1, n_norm)


def crossing_shift(model: G2Model, delta_1: float) -> float:
    """How far the crossing moves when the classical line drops to 1 - delta_1.

    Returns t - t' with g2(t') = 1 - delta_1, found by bisection on [0, t].
    """
    t = classical_crossing(model)
    if delta_1 <= 0:
        return 0.0
    target = 1.0 - delta_1
    if model(0.0) >= target:
        return t
    lo, hi = 0.0, t
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if model(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(t, 1.0):
            break
    return t - 0.5 * (lo + hi)
