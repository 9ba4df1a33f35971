import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from nvqrng.g2 import REFERENCE_G2, G2Model, NoCrossingError, classical_crossing, g2_integral


def models():
    return st.builds(
        lambda l2, ratio, a, b_frac: G2Model(a, l2 * ratio, a * b_frac, l2),
        st.floats(1e-4, 0.05),
        st.floats(1.5, 200),
        st.floats(0.2, 1.0),
        st.floats(0.01, 0.95),
    )


def test_reference_values():
    assert REFERENCE_G2.g2_0 == pytest.approx(0.111598, abs=1e-6)
    assert classical_crossing(REFERENCE_G2) == pytest.approx(21.12936, abs=1e-4)
    assert g2_integral(REFERENCE_G2, -21.12936, 21.12936) == pytest.approx(28.963, abs=2e-3)


def test_crossing_matches_root_finder():
    m = REFERENCE_G2
    root = brentq(lambda x: m(x) - 1.0, 1e-6, 1000)
    assert classical_crossing(m) == pytest.approx(root, abs=1e-6)


@given(models())
def test_crossing_is_a_root(m):
    t = classical_crossing(m)
    assert t > 0
    assert m(t) == pytest.approx(1.0, abs=1e-9)


def test_no_crossing_cases():
    with pytest.raises(NoCrossingError):
        classical_crossing(G2Model(0.1, 0.1, 0.2, 0.01))
    with pytest.raises(NoCrossingError):
        classical_crossing(G2Model(1.0, 0.1, 0.0, 0.01))


def test_invalid_models_rejected():
    with pytest.raises(ValueError):
        G2Model(1.0, 0.01, 0.1, 0.1)
    with pytest.raises(ValueError):
        G2Model(-0.1, 0.1, 0.0, 0.01)
    with pytest.raises(ValueError):
        G2Model(1.5, 0.1, 0.1, 0.01)


@settings(max_examples=50)
@given(models(), st.floats(-200, 200), st.floats(0, 300))
def test_integral_matches_quadrature(m, t1, width):
    t2 = t1 + width
    ref = quad(m, t1, t2, points=[0.0] if t1 < 0 < t2 else None, limit=200)[0]
    assert g2_integral(m, t1, t2) == pytest.approx(ref, rel=1e-7, abs=1e-9)


@given(models(), st.floats(0, 500))
def test_symmetry(m, tau):
    assert m(tau) == m(-tau)
    assert g2_integral(m, -tau, 0) == pytest.approx(g2_integral(m, 0, tau), rel=1e-12, abs=1e-12)


def test_integral_rejects_reversed_bounds():
    with pytest.raises(ValueError):
        g2_integral(REFERENCE_G2, 1.0, 0.0)


def test_array_evaluation():
    tau = np.linspace(-50, 50, 11)
    out = REFERENCE_G2(tau)
    assert out.shape == tau.shape
    assert out[5] == pytest.approx(REFERENCE_G2.g2_0)


def test_scaled_mixes_toward_one():
    m = REFERENCE_G2.scaled(0.25)
    assert m.g2_0 == pytest.approx(1 - 0.25 * (1 - REFERENCE_G2.g2_0))
    assert classical_crossing(m) == pytest.approx(classical_crossing(REFERENCE_G2))
    assert math.isclose(REFERENCE_G2.scaled(0.0)(3.0), 1.0)


def test_trivial_integrals_and_crossing():
    flat = G2Model(0.0, 0.2, 0.0, 0.1)
    assert g2_integral(flat, 0, 10) == pytest.approx(10.0)
    assert g2_integral(REFERENCE_G2, 7.0, 7.0) == 0.0
    assert classical_crossing(G2Model(0.5, 0.2, 0.5, 0.1)) == 0.0
