import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkdv_lab import fourier, pde
from gkdv_lab.nonlinearity import power
from gkdv_lab.spectral import make_Z


@pytest.fixture(scope="module")
def tpl7(sol7, spec7):
    return pde.build_templates(sol7, 160.0, 2048, 1, spec7.Z, spectral=spec7)


@pytest.fixture(scope="module")
def tpl7_wide(sol7, spec7):
    # same spacing as tpl7 on a wider box, for separation-40 checks
    return pde.build_templates(sol7, 240.0, 3072, 1, spec7.Z, spectral=spec7)


@pytest.fixture(scope="module")
def tpl3(sol3):
    return pde.build_templates(sol3, 200.0, 2048, 1, make_Z(sol3.qtilde, 5.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-30.0, max_value=30.0), st.floats(min_value=-30.0, max_value=30.0))
def test_shifts_compose(a, b):
    x = pde.grid(80.0, 256)
    u = np.exp(-x**2)
    once = fourier.shift(u, 80.0, a + b)
    twice = fourier.shift(fourier.shift(u, 80.0, a), 80.0, b)
    assert np.max(np.abs(once - twice)) < 1e-12


@given(st.floats(min_value=-1e3, max_value=1e3))
def test_min_image_range(x):
    y = pde.min_image(x, 50.0)
    assert -25.0 <= y < 25.0 + 1e-9
    assert (x - y) / 50.0 == pytest.approx(round((x - y) / 50.0), abs=1e-9)


def test_field_state_rejects_complex():
    with pytest.raises((TypeError, ValueError)):
        pde.FieldState(10.0, np.zeros(8, dtype=complex))


def test_zero_field_stays_zero():
    start = pde.FieldState(40.0, np.zeros(256))
    run = pde.evolve(start, power(3.0), 0.01, 1.0, 0.5)
    assert run.status == "completed"
    assert np.all(run.final.u == 0.0)


def test_stepper_is_fourth_order(sol3):
    nl = power(3.0)
    start = pde.soliton_data(sol3, 60.0, 512)
    exact = pde.soliton_data(sol3, 60.0, 512, 1.0).u
    errs = [np.max(np.abs(pde.evolve(start, nl, dt, 1.0).final.u - exact)) for dt in (0.04, 0.02)]
    assert 12.0 < errs[0] / errs[1] < 20.0


def test_evolve_argument_checks(sol3):
    start = pde.soliton_data(sol3, 60.0, 512)
    with pytest.raises(ValueError, match="multiple of sample_dt"):
        pde.evolve(start, power(3.0), 0.01, 1.0, 0.3)
    coarse = pde.soliton_data(sol3, 60.0, 32)
    with pytest.raises(ValueError, match="under-resolved"):
        pde.evolve(coarse, power(3.0), 0.01, 1.0)


def test_energy_and_mass_of_single_soliton(sol3):
    state = pde.soliton_data(sol3, 100.0, 1024, 3.0)
    assert state.mass() == pytest.approx(sol3.constants.mass, rel=1e-12)
    assert state.energy(power(3.0)) == pytest.approx(sol3.constants.energy, rel=1e-10)


def test_symmetric_pair_is_even(sol7):
    u = pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048).u
    # x_j = -L/2 + j h mirrors to x_{n-j}
    mirror = np.roll(u[::-1], 1)
    assert np.max(np.abs(u - mirror)) < 1e-15


def test_pair_data_preconditions(sol7):
    with pytest.raises(ValueError, match="below 10"):
        pde.two_soliton_data(sol7, 8.0, 1, 160.0, 2048)
    with pytest.raises(ValueError, match="below 4 q0"):
        pde.two_soliton_data(sol7, 14.0, 1, 50.0, 1024)
    with pytest.raises(ValueError, match="templates"):
        pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048, mu=(0.0, 1e-3))


@pytest.mark.parametrize("sigma", [1, -1])
def test_pair_hamiltonian_follows_interaction_law(sol7, sigma):
    nl = power(7.0)
    u = pde.two_soliton_data(sol7, 14.0, sigma, 160.0, 2048)
    excess = pde.hamiltonian(u, nl) - 2.0 * sol7.constants.H
    law = -sigma * 2.0 * sol7.constants.k0**2 * math.exp(-14.0)
    assert excess / law == pytest.approx(1.0, abs=1e-4)


def test_exact_pair_fit(sol7, tpl7):
    w = pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048).u
    q1, q2, eps, iters = pde.modulation_fit(w, tpl7, (-7.0, 7.0))
    assert q1 == pytest.approx(-7.0, abs=1e-10) and q2 == pytest.approx(7.0, abs=1e-10)
    # the septic profile is band-limited only to ~1e-10 at this spacing
    assert np.max(np.abs(eps)) < 1e-9


def test_shifted_guess_converges_quickly(sol7, tpl7):
    w = pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048).u
    q1, q2, _, iters = pde.modulation_fit(w, tpl7, (-7.3, 6.7))
    assert iters <= 5
    assert q1 == pytest.approx(-7.0, abs=1e-10) and q2 == pytest.approx(7.0, abs=1e-10)


def test_perturbed_fit_is_orthogonal(sol7, tpl7):
    w = pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048, mu=(0.0, 1e-3), templates=tpl7).u
    q1, q2, eps, _ = pde.modulation_fit(w, tpl7, (-7.0, 7.0))
    assert np.max(np.abs(eps)) > 1e-4
    assert max(map(abs, pde.orthogonality_residuals(eps, tpl7, q1, q2))) < 1e-12


def test_fit_rejects_swapped_centres(sol7, tpl7):
    w = pde.two_soliton_data(sol7, 14.0, 1, 160.0, 2048).u
    with pytest.raises(pde.TubeExit, match="ordering"):
        pde.modulation_fit(w, tpl7, (7.0, -7.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-20.0, max_value=0.0), st.floats(min_value=8.0, max_value=30.0),
       st.floats(min_value=-60.0, max_value=60.0))
def test_cutoffs_partition_unity(q1, gap, x):
    phi1, phi2 = pde.cutoff_weights(np.array([x]), q1, q1 + gap)
    assert phi1[0] + phi2[0] == 1.0
    assert 0.0 <= phi1[0] <= 1.0


def test_momenta_oracle(sol7, tpl7):
    zero = np.zeros(tpl7.n)
    assert pde.localized_momenta(zero, tpl7, -7.0, 7.0) == (0.0, 0.0)
    c = 1e-3
    R1 = tpl7.at("Q", -7.0)
    p1, p2 = pde.localized_momenta(c * R1, tpl7, -7.0, 7.0)
    phi1, phi2 = pde.cutoff_weights(pde.grid(160.0, 2048), -7.0, 7.0)
    h = tpl7.h
    assert p1 == pytest.approx(c * sol7.constants.norm_sq + 0.5 * c**2 * h * np.sum(phi1 * R1**2),
                               rel=1e-10)
    # only the tail overlap of R2 with R1 survives
    R2 = tpl7.at("Q", 7.0)
    assert p2 == pytest.approx(c * h * np.sum(R2 * R1) + 0.5 * c**2 * h * np.sum(phi2 * R1**2),
                               rel=1e-9)
    assert abs(p2) < 1e-4 * abs(p1)


def test_projections_same_soliton(tpl7):
    zero = np.zeros(tpl7.n)
    assert pde.direction_projections(zero, tpl7, -7.0, 7.0) == (0.0, 0.0, 0.0, 0.0)
    a1m, a1p, _, _ = pde.direction_projections(tpl7.at("Y_minus", -7.0), tpl7, -7.0, 7.0)
    assert a1m == pytest.approx(1.0, abs=1e-8) and abs(a1p) < 1e-8


def test_projections_of_translation_mode(tpl7_wide):
    # alpha_minus has a slow one-sided tail, so the cross terms need a wide gap
    q1, q2 = -20.0, 20.0
    proj = pde.direction_projections(tpl7_wide.at("dQ", q1), tpl7_wide, q1, q2)
    assert max(map(abs, proj)) < 1e-8


def test_projections_need_unstable_basis(tpl3):
    with pytest.raises(ValueError, match="supercritical"):
        pde.direction_projections(np.zeros(tpl3.n), tpl3, -20.0, 20.0)


def test_frame_consistency(sol3, tpl3):
    nl = power(3.0)
    start = pde.two_soliton_data(sol3, 40.0, 1, 200.0, 2048)
    run = pde.evolve(start, nl, 0.002, 2.0, 0.5)
    centres = []
    for st_ in run.states:
        q1, q2, *_ = pde.modulation_fit(pde.frame_field(st_, 1.0), tpl3, (-20.0, 20.0))
        centres.append((q1, q2))
    drift = np.abs(np.diff(np.array(centres), axis=0)) / 0.5
    assert drift.max() < 1e-6


def test_default_step_scales_with_stiffness(sol3, sol7):
    assert pde.default_dt(sol7) == pytest.approx(5e-4)
    assert pde.default_dt(sol3) == pytest.approx(0.014 / 6.0)


def test_tracked_stable_pair_separates():
    run = pde.tracked_run({"p": 3.0, "q0": 12.0, "sigma": 1, "t_max": 20.0, "n": 1024,
                           "length": 120.0, "sample_dt": 1.0})
    gap = np.array([r.q2 - r.q1 for r in run.records])
    assert run.status == "completed"
    assert np.all(np.diff(gap) > 0)
    assert run.report["reduced_gap_maxdev"] < 1e-4
    for r in run.records:
        assert r.orth_residual <= 1e-10 * max(r.eps_h1, 1e-16) + 1e-15


def test_tracked_unstable_pair_leaves_tube():
    run = pde.tracked_run(pde.TrackConfig(t_max=20.0, growth_check=False))
    assert run.status == "truncated" and "tube" in run.reason
    assert run.records[-1].t < 20.0
    series = run.series()
    assert series.shape[1] == len(pde.ModulationRecord.COLUMNS)
