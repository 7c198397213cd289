import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qswitch.emitter import (
    EmitterParams,
    analytic_c,
    analytic_gamma,
    analytic_q,
    emission_coefficients,
    integrate_emitter,
    photon_overlap,
    reduced_bandwidth_control,
    sech,
    sech_control,
    transmission_probability,
)

K = 1.0


def run_sech(chi, span=30.0, n=601, tol=1e-12):
    grid = np.linspace(-span, span, n)
    q0, c0 = analytic_q(-span, chi, K), analytic_c(-span, chi, K)
    tr = integrate_emitter(EmitterParams(K, chi, True), lambda t: sech_control(t, K), -span, span,
                           tol=tol, t_eval=grid, q0=q0, c0=c0, atol=1e-15)
    return grid, tr


def test_sech_is_overflow_free():
    assert sech(0.0) == 1.0
    assert sech(1e4) == 0.0
    assert sech(-3.0) == pytest.approx(1 / math.cosh(3.0), rel=1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        EmitterParams(kappa=0)
    with pytest.raises(ValueError):
        EmitterParams(kappa=1, chi=-1)
    assert EmitterParams(1, 2, False).shift == 0
    assert EmitterParams(1, 2, True).shift == 2


def test_integrate_rejects_empty_interval():
    with pytest.raises(ValueError):
        integrate_emitter(EmitterParams(1), lambda t: 0.0, 1.0, 1.0)


@pytest.mark.parametrize("chi", [0.0, 0.3, 1.0, 2.0, 5.0, 20.0])
def test_analytic_solution_matches_integration(chi):
    grid, tr = run_sech(chi)
    assert np.max(np.abs(tr.q - analytic_q(grid, chi, K))) < 1e-8
    assert np.max(np.abs(tr.c - analytic_c(grid, chi, K))) < 1e-8


def test_closed_switch_empties_qubit():
    _, tr = run_sech(0.0)
    assert abs(tr.q[-1]) ** 2 < 1e-12
    assert tr.emitted[-1] == pytest.approx(1.0, abs=1e-10)


def test_norm_conserved_with_emitted_flux():
    _, tr = run_sech(1.3)
    assert np.max(np.abs(tr.norm_defect())) < 1e-9


@pytest.mark.parametrize("chi", [0.5, 1.0, 3.0])
def test_emitted_norm_is_transmission_probability(chi):
    _, tr = run_sech(chi)
    assert tr.emitted[-1] - tr.emitted[0] == pytest.approx(transmission_probability(chi, K), abs=1e-9)


def test_transmission_probability_values():
    assert transmission_probability(0.0, 2.0) == 1.0
    assert transmission_probability(1.0, 1.0) == 0.5
    with pytest.raises(ValueError):
        transmission_probability(1.0, 0.0)


def test_emission_coefficients():
    e = emission_coefficients(1.0, 1.0)
    assert abs(e.alpha) ** 2 == pytest.approx(0.5)
    assert abs(e.beta) ** 2 == pytest.approx(0.5)
    assert emission_coefficients(0.0, 1.0).beta == pytest.approx(1.0)
    # amplitudes of the two outcomes add up to the whole excitation
    for chi in (0.1, 0.7, 4.0):
        e = emission_coefficients(chi, 1.0)
        assert abs(e.alpha) ** 2 + abs(e.beta) ** 2 == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(-20.0, 20.0))
def test_photon_shape_invariance(chi, t):
    g0 = analytic_gamma(t, 0.0, K)
    g = analytic_gamma(t, chi, K)
    assert abs(g) ** 2 == pytest.approx(transmission_probability(chi, K) * abs(g0) ** 2, rel=1e-12, abs=1e-300)
    assert g == pytest.approx(emission_coefficients(chi, K).beta * g0, rel=1e-12, abs=1e-300)


def test_gamma_numeric_shape_invariance():
    grid, ref = run_sech(0.0)
    for chi in (0.3, 2.0):
        _, tr = run_sech(chi)
        pt = transmission_probability(chi, K)
        assert np.max(np.abs(np.abs(tr.gamma) ** 2 - pt * np.abs(ref.gamma) ** 2)) < 1e-8


def test_reduced_bandwidth_control_emits_narrow_sech():
    kp = 0.4
    # start far enough out that the resonator is empty to ~exp(-30)
    span = 60.0 / kp
    grid = np.linspace(-span, span, 1601)
    tr = integrate_emitter(EmitterParams(K), lambda t: reduced_bandwidth_control(t, K, kp), -span, span,
                           tol=1e-12, t_eval=grid, atol=1e-15)
    target = 0.5 * math.sqrt(kp) * sech(0.5 * kp * grid)
    assert np.max(np.abs(np.abs(tr.gamma) - target)) < 1e-8


def test_reduced_bandwidth_limits():
    kp = 0.25
    late = (K - kp) / (2 * math.sqrt(K / kp - 1))
    assert reduced_bandwidth_control(1e3, K, kp) == pytest.approx(late, rel=1e-12)
    assert reduced_bandwidth_control(-1e4, K, kp) == 0.0
    with pytest.raises(ValueError):
        reduced_bandwidth_control(0.0, K, K)


def test_photon_overlap():
    t = np.linspace(-30, 30, 4001)
    g0 = analytic_gamma(t, 0.0, K)
    g1 = analytic_gamma(t, 3.0, K)
    assert abs(photon_overlap(g0, g1, t)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        photon_overlap(np.zeros_like(t), g1, t)
    with pytest.raises(ValueError):
        photon_overlap(g0[:-1], g1, t)
