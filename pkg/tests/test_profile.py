import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkdv_lab.nonlinearity import power, saturating_cubic
from gkdv_lab.profile import (compute_kappa, compute_profile, compute_Qtilde,
                              interaction_constant, ode_residual, operator_residual, soliton)
from gkdv_lab.suites import closed_form_profile


def test_cubic_constants(sol3):
    c = sol3.constants
    assert c.s0 == pytest.approx(math.sqrt(2.0), rel=1e-12)
    # Q = sqrt(2) sech x ~ 2 sqrt(2) e^{-x}
    assert c.k0 == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-8)
    assert c.norm_sq == pytest.approx(4.0, rel=1e-10)
    assert c.qq_tilde == pytest.approx(1.0, rel=1e-8)
    assert c.kappa is None


def test_quadratic_tail_constant():
    # Q = (3/2) sech^2(x/2) ~ 6 e^{-x}
    assert soliton(power(2.0), 1.0).constants.k0 == pytest.approx(6.0, rel=1e-8)


def test_septic_constants(sol7):
    c = sol7.constants
    assert c.k0 == pytest.approx(2.0 ** (2.0 / 3.0), rel=1e-8)
    # ||Q_v||^2 ~ v^(-1/6) at p = 7
    assert c.qq_tilde == pytest.approx(-c.norm_sq / 12.0, rel=1e-8)
    assert c.kappa == pytest.approx(c.k0 * math.sqrt(2.0 / abs(c.qq_tilde)), rel=1e-14)
    assert c.H == pytest.approx(c.energy + 0.5 * c.mass, rel=1e-14)


def test_cubic_velocity_derivative(sol3):
    x = sol3.profile.x
    sech = 1.0 / np.cosh(x)
    exact = (sech - x * sech * np.tanh(x)) / math.sqrt(2.0)
    assert sol3.qtilde(0.0) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-10)
    assert np.max(np.abs(sol3.qtilde.Qtilde - exact)) < 1e-8


def test_velocity_derivative_methods_agree(sol7):
    fd = compute_Qtilde(sol7.profile, "finite-difference")
    assert np.max(np.abs(fd.Qtilde - sol7.qtilde.Qtilde)) < 1e-6
    assert operator_residual(sol7.qtilde) < 1e-8


@settings(max_examples=12, deadline=None)
@given(st.floats(min_value=2.0, max_value=8.0), st.floats(min_value=0.5, max_value=3.0))
def test_scaling_invariance(p, v):
    # Q_v(x) = v^(1/(p-1)) Q_1(sqrt(v) x)
    one = compute_profile(power(p), 1.0)
    prof = compute_profile(power(p), v)
    xs = np.linspace(0.0, 8.0, 33)
    scaled = v ** (1.0 / (p - 1.0)) * one(math.sqrt(v) * xs)
    assert np.max(np.abs(prof(xs) - scaled)) < 1e-9 * prof.s0


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=1.5, max_value=9.0))
def test_profile_matches_closed_form(p):
    prof = compute_profile(power(p), 1.0)
    assert np.max(np.abs(prof.Q - closed_form_profile(p, 1.0, prof.x))) < 1e-9
    assert np.all(np.diff(prof.Q) < 0)


def test_profile_reflection_is_even(sol7):
    x, Q, dQ = sol7.profile.full_grid()
    # x[0] = -x_max has no mirror; the rest is symmetric about x = 0
    assert np.array_equal(Q[1:], Q[1:][::-1])
    assert np.array_equal(dQ[1:], -dQ[1:][::-1])
    assert sol7.profile(-3.0) == sol7.profile(3.0)
    assert sol7.profile.derivative(-3.0) == -sol7.profile.derivative(3.0)


def test_ode_residual(sol3, sol7):
    assert ode_residual(sol3.profile) < 1e-9
    assert ode_residual(sol7.profile) < 1e-8


def test_saturating_profile():
    sol = soliton(saturating_cubic(), 0.5)
    assert ode_residual(sol.profile) < 1e-8
    assert sol.constants.qq_tilde > 0


def test_kappa_refused_in_stable_regime(sol3):
    with pytest.raises(ValueError, match="kappa undefined"):
        compute_kappa(sol3.constants)
    assert interaction_constant(2.0, -0.5, 1.0) == interaction_constant(2.0, 0.5, 1.0)


def test_speed_outside_range_rejected():
    with pytest.raises(ValueError):
        compute_profile(saturating_cubic(), 1.5)
