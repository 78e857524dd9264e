import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkdv_lab.nonlinearity import (check_admissible, custom, from_config, power,
                                   s0_of_v, saturating_cubic, tilde_F, v_star)

exponents = st.floats(min_value=1.5, max_value=9.0)
amplitudes = st.floats(min_value=1e-3, max_value=5.0)


@given(exponents, amplitudes)
def test_power_is_odd_and_F_even(p, u):
    nl = power(p)
    assert nl.f(-u) == pytest.approx(-nl.f(u), rel=1e-14)
    assert nl.F(-u) == pytest.approx(nl.F(u), rel=1e-14)


@given(exponents, amplitudes)
def test_F_is_primitive_of_f(p, u):
    nl = power(p)
    h = 1e-5 * u
    slope = (nl.F(u + h) - nl.F(u - h)) / (2 * h)
    assert slope == pytest.approx(float(nl.f(u)), rel=1e-6)


@given(exponents, st.floats(min_value=0.05, max_value=20.0))
def test_amplitude_matches_power_formula(p, v):
    s0 = s0_of_v(power(p), v)
    assert s0 == pytest.approx(((p + 1) * v / 2) ** (1 / (p - 1)), rel=1e-10)
    assert tilde_F(power(p), s0) == pytest.approx(v, rel=1e-10)


def test_power_has_unbounded_speed_range():
    assert v_star(power(3.0)) == math.inf
    assert v_star(power(1.5)) == math.inf


def test_saturating_cubic():
    nl = saturating_cubic()
    assert nl.v_star == pytest.approx(1.0, abs=1e-12)
    # f' overshoots 1 and comes back down, so convexity fails past u = sqrt(3)
    rep = check_admissible(nl, np.geomspace(1e-3, 1e3, 200))
    assert [v["check"] for v in rep.violations] == ["f' nondecreasing"]
    assert rep.first_violation["u"] > math.sqrt(3.0) - 0.2
    assert check_admissible(nl, np.linspace(0.01, 1.7, 100)).passed
    with pytest.raises(ValueError, match="outside admissible range"):
        s0_of_v(nl, 1.0)
    s0 = s0_of_v(nl, 0.5)
    assert tilde_F(nl, s0) == pytest.approx(0.5, rel=1e-12)


def test_admissibility_reports_first_violation():
    # f(u) = u^2 is even, so both parity checks trip
    nl = custom(lambda u: np.asarray(u) ** 2, lambda u: np.asarray(u) ** 3 / 3,
                lambda u: 2 * np.asarray(u), name="even-f")
    rep = check_admissible(nl, np.linspace(0.1, 2.0, 20))
    assert not rep.passed
    checks = {v["check"] for v in rep.violations}
    assert "f odd" in checks and "F even" in checks
    assert rep.first_violation["u"] == pytest.approx(0.1)


def test_admissibility_rejects_bad_grid():
    with pytest.raises(ValueError, match="positive and strictly increasing"):
        check_admissible(power(3.0), [1.0, 0.5])


def test_power_below_one_rejected():
    with pytest.raises(ValueError, match="must exceed 1"):
        power(1.0)


def test_from_config():
    assert from_config({"kind": "power", "p": 4}).exponent == 4.0
    assert from_config({"kind": "saturating-cubic"}).name == "saturating-cubic"
    with pytest.raises(ValueError, match="nonlinearity.p is required"):
        from_config({"kind": "power"})
    with pytest.raises(ValueError, match="unknown built-in"):
        from_config({"kind": "quartic"})
    with pytest.raises(ValueError, match="takes no parameters"):
        from_config({"kind": "saturating-cubic", "p": 3})
