"""Acceptance criteria at their stated tolerances.

A summary line per criterion is printed at the end of the pytest run.
"""

import math

import numpy as np
import pytest

from nvqrng.apparatus import ApparatusParams, ParamSigmas, analytic_click_rates
from nvqrng.correlate import fit_g2, g2_histogram, normalize
from nvqrng.emitter import fluorescence_rates, source_g2
from nvqrng.entropy import (
    EmpiricalContext,
    empirical_entropy,
    model1_entropy,
    parametric_reports,
    probs_from_params,
    sigma_multiplier,
    tuple_frequencies,
)
from nvqrng.extract import HashSeed, extract_stream, extractable_bits, hash_blocks, plan_extraction
from nvqrng.g2 import REFERENCE_G2, classical_crossing
from nvqrng.tags import RawBits, TupleWindow, antibunched_tuples, bits_from_tags

from .conftest import SIM_POWER_MW, SIM_SECONDS

criterion = pytest.mark.criterion

N_RECORDED = 55796707904
T_RECORDED = 608125.0
EPS = 2.0**-100


@pytest.fixture(scope="module")
def reports():
    res = parametric_reports(ApparatusParams(), REFERENCE_G2, ParamSigmas())
    return {r.model: r for r in res.reports}


@criterion(1, "emitter rates at 0.026 mW")
def test_c1_emitter_rates():
    _, total, detected = fluorescence_rates(0.026)
    print(f"F_bg = {total:.6g} s^-1, detected = {detected:.6g} s^-1")
    assert total == pytest.approx(1.28e7, rel=0.01)
    assert detected == pytest.approx(99.7e3, rel=0.01)


@criterion(2, "g2 fit constants")
def test_c2_g2_constants():
    print(f"g2(0) = {REFERENCE_G2.g2_0:.6f}, t = {classical_crossing(REFERENCE_G2):.5f} ns")
    assert REFERENCE_G2.g2_0 == pytest.approx(0.1116, abs=1e-4)
    assert classical_crossing(REFERENCE_G2) == pytest.approx(21.13, abs=0.01)


@criterion(3, "model 1 parametric chain")
def test_c3_model1(reports):
    pt = probs_from_params(ApparatusParams(), REFERENCE_G2)
    r = reports[1]
    print(f"p1={pt.p_b:.6f} p10={pt.p_ab:.6f} H={r.h_raw:.6f} d={r.delta:.6f} Hc={r.h_conservative:.6f}")
    assert pt.p_b == pytest.approx(0.6100, abs=5e-4)
    assert pt.p_ab == pytest.approx(0.2379, abs=5e-4)
    assert r.h_raw == pytest.approx(0.7132, abs=1e-3)
    assert r.delta == pytest.approx(0.006, abs=1e-3)
    assert r.h_conservative == pytest.approx(0.5559, abs=4e-3)


@criterion(4, "model 2 chain")
def test_c4_model2(reports):
    r = reports[2]
    print(f"p_e={r.p_e:.6f} p_eq={r.p_guess:.6f} H={r.h_raw:.6f} Hc={r.h_conservative:.6f}")
    assert r.p_e == pytest.approx(0.0575, abs=5e-4)
    assert r.p_guess == pytest.approx(0.6324, abs=1e-3)
    assert r.h_raw == pytest.approx(0.6612, abs=1e-3)
    assert r.h_conservative == pytest.approx(0.5168, abs=4e-3)


@criterion(5, "model 3 chain")
def test_c5_model3(reports):
    r = reports[3]
    p0 = r.extra["p_bold_0"]
    print(f"p_c={r.p_c:.7f} p(0)={p0:.7f} H={r.h_raw:.5e} Hc={r.h_conservative:.5e}")
    assert r.p_c == pytest.approx(0.99939, abs=2e-5)
    assert p0 == pytest.approx(0.500051, abs=5e-6)
    assert r.h_raw == pytest.approx(4.396e-4, abs=1e-5)
    assert r.h_conservative == pytest.approx(3.746e-4, abs=1e-5)


@criterion(6, "extraction planning")
@pytest.mark.parametrize(
    "h, k_expected, rate_expected",
    [(0.5559, 3.10e10, 5.10e4), (0.5168, 2.88e10, 4.74e4), (3.746e-4, 2.09e7, 34.37)],
)
def test_c6_extraction_plan(h, k_expected, rate_expected):
    k = plan_extraction(N_RECORDED, h, EPS).k_total
    assert k == extractable_bits(N_RECORDED, h, EPS)
    print(f"H={h}: k={k:.6g}, rate={k / T_RECORDED:.6g} bits/s")
    assert k == pytest.approx(k_expected, rel=5e-3)
    assert k / T_RECORDED == pytest.approx(rate_expected, rel=5e-3)


@criterion(7, "sigma multiplier")
def test_c7_sigma_multiplier():
    k = sigma_multiplier(EPS)
    print(f"k = {k:.6f}")
    assert k == pytest.approx(11.5, abs=0.1)


@criterion(8, "tuple counting oracle")
def test_c8_tuple_counting():
    c = tuple_frequencies(RawBits.from_string("1110101000001110"))
    assert (c.n00, c.n01, c.n10, c.n11) == (4, 4, 4, 4)


@criterion(9, "simulation vs analytics (60 s)")
def test_c9_click_rates(reference_run):
    ra, rb = reference_run.singles_rates()
    ea, eb = analytic_click_rates(ApparatusParams(), source_g2(SIM_POWER_MW))
    for name, got, want in (("A", ra, ea), ("B", rb, eb)):
        sigma = math.sqrt(want * SIM_SECONDS) / SIM_SECONDS
        print(f"channel {name}: simulated {got:.1f} cps, analytic {want:.1f} cps, {abs(got - want) / sigma:.2f} sigma")
    assert abs(ra - ea) <= 3 * math.sqrt(ea * SIM_SECONDS) / SIM_SECONDS, "channel A rate"
    assert abs(rb - eb) <= 3 * math.sqrt(eb * SIM_SECONDS) / SIM_SECONDS, "channel B rate"


@criterion(9, "simulation vs analytics (60 s)")
def test_c9_fitted_g2_zero(reference_run):
    fit = fit_g2(normalize(g2_histogram(reference_run)))
    predicted = source_g2(SIM_POWER_MW).g2_0
    print(f"fitted g2(0) = {fit.g2_0:.4f} +- {fit.g2_0_stderr:.4f}, predicted {predicted:.4f}")
    assert fit.g2_0 == pytest.approx(predicted, abs=0.02)


@criterion(9, "simulation vs analytics (60 s)")
def test_c9_empirical_model1(reference_run):
    emp = empirical_entropy(bits_from_tags(reference_run), 1, EmpiricalContext())
    par = model1_entropy(ApparatusParams(), REFERENCE_G2, ParamSigmas())
    print(f"empirical H = {emp.h_raw:.5f}, parametric H = {par.h_raw:.5f}")
    assert emp.h_raw == pytest.approx(par.h_raw, abs=0.01)


@criterion(10, "tuple rate")
def test_c10_tuple_rate(reference_run):
    bold = antibunched_tuples(reference_run, TupleWindow(classical_crossing(REFERENCE_G2)))
    rate = len(bold) / SIM_SECONDS
    print(f"tuple rate = {rate:.2f} s^-1")
    assert rate == pytest.approx(58.43, rel=0.10)


@criterion(11, "extractor statistics")
def test_c11_extractor(reference_run):
    bits = RawBits(bits_from_tags(reference_run).bits[: 10**6])
    h = model1_entropy(ApparatusParams(), REFERENCE_G2, ParamSigmas()).h_conservative
    plan = plan_extraction(len(bits), h, EPS, seed=HashSeed.from_int(0xC0FFEE))
    y = extract_stream(bits, plan)
    n = len(y)
    dev = abs(y.bits.mean() - 0.5)
    print(f"{n} output bits, monobit deviation {dev:.5f} (limit {3 / (2 * math.sqrt(n)):.5f})")
    assert n == plan.block_count * plan.k_block
    assert dev < 3 / (2 * math.sqrt(n))

    rng = np.random.default_rng(11)
    pairs = 10**4
    x = rng.integers(0, 2, size=(pairs, plan.n_block), dtype=np.uint8)
    xp = rng.integers(0, 2, size=(pairs, plan.n_block), dtype=np.uint8)
    lhs = hash_blocks(x ^ xp, plan.seed, plan.k_block)
    rhs = hash_blocks(x, plan.seed, plan.k_block) ^ hash_blocks(xp, plan.seed, plan.k_block)
    assert np.array_equal(lhs, rhs)
