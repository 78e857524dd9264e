import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkdv_lab import reduced
from gkdv_lab.nonlinearity import power
from gkdv_lab.reduced import (CriticalVelocityError, ReducedState, effective_two_soliton,
                              energy_gradient, family_for, fit_log_law, integrate_reduced,
                              interaction_energy, interaction_force, profile_family,
                              reduced_EM, sample_times, stable_manifold_state, superpose,
                              symplectic_blocks, vector_field)


@pytest.fixture(scope="module")
def family7():
    return profile_family(power(7.0), 0.5, 1.5)


@settings(max_examples=15, deadline=None)
@given(st.floats(min_value=0.6, max_value=1.4))
def test_family_scaling(family7, v):
    # mass ~ v^(2/(p-1) - 1/2), energy ~ v^(2/(p-1) + 1/2)
    m1, e1 = family7.mass(1.0), family7.energy(1.0)
    assert family7.mass(v) == pytest.approx(m1 * v ** (1 / 3 - 1 / 2), rel=1e-9)
    assert family7.energy(v) == pytest.approx(e1 * v ** (1 / 3 + 1 / 2), rel=1e-9)
    assert family7.qq_tilde(v) == pytest.approx(0.5 * (1 / 3 - 1 / 2) * m1 * v ** (-7 / 6), rel=1e-7)


def test_family_matches_profile(family7, sol7):
    assert family7.mass(1.0) == pytest.approx(sol7.constants.mass, rel=1e-10)
    assert family7.energy(1.0) == pytest.approx(sol7.constants.energy, rel=1e-10)
    with pytest.raises(ValueError, match="outside the family window"):
        family7.mass(2.0)


def test_state_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        ReducedState([1.0, 0.0], [1.0, 1.0], (1, 1))
    with pytest.raises(ValueError, match="speeds must be positive"):
        ReducedState([0.0, 1.0], [1.0, -1.0], (1, 1))
    with pytest.raises(ValueError, match="signs"):
        ReducedState([0.0], [1.0], (2,))


def test_superpose_and_far_pair(family7):
    state = ReducedState([-30.0, 30.0], [1.0, 1.0], (1, -1))
    grid, u = superpose(family7, state)
    centre = np.argmin(np.abs(grid - 30.0))
    assert u[centre] == pytest.approx(-family7.sample(1.0, 0.0, 1).Q[0], rel=1e-12)
    E, M = reduced_EM(family7, state)
    assert M == pytest.approx(2 * family7.mass(1.0), rel=1e-9)
    assert E == pytest.approx(2 * family7.energy(1.0), rel=1e-9)


def test_symplectic_matrix_is_antisymmetric(family7):
    state = ReducedState([-7.0, 7.0], [0.9, 1.1], (1, 1))
    m = symplectic_blocks(family7, state).matrix
    assert np.allclose(m, -m.T, atol=1e-14)
    assert m[0, 2] == pytest.approx(family7.qq_tilde(0.9), rel=1e-12)


def test_critical_speed_is_singular():
    family = family_for(power(5.0), [1.0, 1.0])
    with pytest.raises(CriticalVelocityError):
        symplectic_blocks(family, ReducedState([-7.0, 7.0], [1.0, 1.0], (1, 1)))


def test_gradients_agree(family7):
    state = ReducedState([-6.0, 6.0], [0.95, 1.05], (1, -1))
    gx_fd, gv_fd = energy_gradient(family7, state, "fd")
    gx_an, gv_an = energy_gradient(family7, state, "analytic")
    assert np.allclose(gx_fd, gx_an, rtol=1e-6, atol=1e-12)
    assert np.allclose(gv_fd, gv_an, rtol=1e-6, atol=1e-12)


def test_free_soliton_moves_at_its_speed(family7):
    X, V = vector_field(family7, ReducedState([0.0], [1.2], (1,)))
    assert X[0] == pytest.approx(1.2, rel=1e-9)
    assert abs(V[0]) < 1e-12
    traj = integrate_reduced(family7, ReducedState([2.0], [0.8], (1,)), (0.0, 50.0), samples=11)
    assert np.allclose(traj.x[:, 0], 2.0 + 0.8 * traj.t, atol=1e-8)


def test_pair_conserves_energy_and_mass(family7):
    traj = integrate_reduced(family7, ReducedState([-6.0, 6.0], [1.0, 1.0], (1, 1)),
                             (0.0, 100.0), gradient="analytic", samples=21)
    assert traj.status == "completed"
    assert max(traj.E_drift, traj.M_drift) < 1e-8
    assert traj.columns() == ["t", "x1", "x2", "v1", "v2", "E", "M"]
    assert traj.rows().shape == (21, 7)


def test_force_is_antisymmetric_and_follows_law(sol7):
    k0 = sol7.constants.k0
    f1 = interaction_force(sol7.profile, 18.0, 1, on=1)
    f2 = interaction_force(sol7.profile, 18.0, 1, on=2)
    assert f1 == pytest.approx(-f2, rel=1e-9)
    assert f1 == pytest.approx(-2 * k0**2 * math.exp(-18.0), rel=2e-3)
    e_int, m_int = interaction_energy(sol7.profile, 18.0, -1)
    assert e_int + 0.5 * m_int == pytest.approx(2 * k0**2 * math.exp(-18.0), rel=2e-3)
    with pytest.raises(ValueError, match="at least 8"):
        interaction_force(sol7.profile, 5.0, 1)


def test_effective_system_follows_closed_form(sol7):
    eff = effective_two_soliton(14.0, (0.0, 1e4), sol7.constants, samples=50)
    assert np.max(np.abs(eff.gap - eff.closed_form())) < 1e-8
    assert np.max(np.abs(eff.r)) < 1e-10
    with pytest.raises(ValueError):
        effective_two_soliton(14.0, (0.0, 1.0), (1.0, 0.5))


def test_stable_manifold_speed_gap(sol7):
    c = sol7.constants
    state = stable_manifold_state(c, 14.0)
    assert state.v[1] - state.v[0] == pytest.approx(2 * c.kappa * math.exp(-7.0), rel=1e-12)
    assert state.v.mean() == pytest.approx(1.0, rel=1e-15)


@given(st.floats(min_value=0.1, max_value=50.0), st.floats(min_value=0.25, max_value=4.0))
def test_log_law_fit_recovers_synthetic_constant(kappa, v):
    t = np.geomspace(1.0, 1e5, 60)
    gap = 2.0 / math.sqrt(v) * np.log(kappa * t)
    fit = fit_log_law((t, gap), v_inf=v)
    assert fit.kappa_fit == pytest.approx(kappa, rel=1e-10)
    assert fit.residual < 1e-10


def test_log_law_fit_refusals():
    t = np.linspace(1.0, 5.0, 10)
    with pytest.raises(ValueError, match="one decade"):
        fit_log_law((t, np.log(t)))
    t = np.geomspace(1.0, 100.0, 10)
    with pytest.raises(ValueError, match="not monotonically"):
        fit_log_law((t, -np.log(t)))


def test_sample_times():
    t = sample_times((0.0, 1e3), 11, "log")
    assert t[0] == 0.0 and t[-1] == pytest.approx(1e3) and np.all(np.diff(t) > 0)
    with pytest.raises(ValueError):
        sample_times((0.0, 1.0), 5, "cubic")


def test_dichotomy_rejects_critical_power():
    with pytest.raises(ValueError, match="critical"):
        reduced.sign_dichotomy_experiment(5.0, 1)
    assert reduced.expected_pairing(1.0) == -1 and reduced.expected_pairing(-1.0) == 1
