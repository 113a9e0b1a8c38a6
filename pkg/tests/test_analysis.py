import copy
from dataclasses import replace

import numpy as np
import pytest

from lfcsynth import numlin
from lfcsynth.analysis import (ClosedLoopRealization, UndefinedNormError, analysis_lmi_residual,
                               build_closed_loop, check_strips, hinf_norm, realization_for,
                               restrict_to_invariant, verify_design)
from lfcsynth.model import build_composite, build_area, design_realization, output_selection
from lfcsynth.synthesis import (AreaGains, DesignSpec, GainSet, area_gains,
                                compute_disturbance_decoupler)

from conftest import CASE1, CASE2_STRIPS, RELAXED_STRIPS, THREE_AREA


def scaled_gains(gains, factor):
    areas = [replace(a, K=a.K * factor) for a in gains.areas]
    return GainSet(areas, gains.strategy, gains.spec, dict(gains.meta))


def test_scalar_norm_is_one():
    r = ClosedLoopRealization(np.array([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    assert hinf_norm(r) == pytest.approx(1.0, abs=1e-12)


def test_zero_input_norm_is_zero():
    r = ClosedLoopRealization(-np.eye(2), np.zeros((2, 1)), np.eye(2))
    assert hinf_norm(r) == 0.0


def test_resonant_peak_found_by_refinement():
    zeta, wn = 0.05, 3.0
    A = np.array([[0.0, 1.0], [-wn ** 2, -2 * zeta * wn]])
    r = ClosedLoopRealization(A, np.array([[0.0], [1.0]]), np.array([[wn ** 2, 0.0]]))
    peak = 1 / (2 * zeta * np.sqrt(1 - zeta ** 2))
    assert hinf_norm(r) == pytest.approx(peak, rel=1e-9)


def test_non_hurwitz_raises():
    r = ClosedLoopRealization(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]))
    with pytest.raises(UndefinedNormError):
        hinf_norm(r)


def test_closed_loop_shape_and_blocks(case1_design, three_area, identity_out):
    gains, _ = case1_design
    real = realization_for(three_area, gains)
    r = build_closed_loop(real, gains, identity_out)
    assert r.Acl.shape == (30, 30) and r.Bcl.shape == (30, 3) and r.Ccl.shape == (15, 30)
    Psi = gains.stack("Psi")
    np.testing.assert_allclose(r.Acl[15:, :15], Psi @ real.dA, atol=1e-12)
    np.testing.assert_allclose(r.Acl[15:, 15:], Psi @ real.A - gains.stack("L1") @ real.C, atol=1e-9)
    assert np.linalg.norm(r.Bcl[15:]) <= 1e-12


def test_separation_when_uncoupled(rng):
    a = build_area(THREE_AREA[0], {})
    s = build_composite([a])
    H, Psi = compute_disturbance_decoupler(a.C, a.F)
    L1 = rng.standard_normal((5, 3))
    g = area_gains(a.A, a.B, a.C, H, Psi, np.zeros((1, 5)), L1)
    r = build_closed_loop(s, GainSet([g]), output_selection(s))
    assert not np.any(r.Acl[5:, :5])
    ev = numlin.eig(r.Acl)
    ref = np.concatenate([numlin.eig(a.A), numlin.eig(Psi @ a.A - L1 @ a.C)])
    np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(ref), atol=1e-8)


def test_physical_and_design_loops_agree(case1_design, three_area, identity_out):
    gains, _ = case1_design
    real = realization_for(three_area, gains)
    rd = build_closed_loop(real, gains, identity_out)
    rp_full = build_closed_loop(three_area, gains, identity_out)
    # the physical loop has exactly one eigenvalue pinned at zero
    evp = numlin.eig(rp_full.Acl)
    assert np.sum(np.abs(evp) < 1e-9) == 1
    rp, removed = restrict_to_invariant(rp_full, three_area)
    assert removed == 1 and rp.order == 29
    evd = numlin.eig(rd.Acl)
    k = np.argmin(np.abs(evd + 2.0))
    np.testing.assert_allclose(np.sort_complex(np.delete(evd, k)),
                               np.sort_complex(numlin.eig(rp.Acl)), atol=1e-8)
    assert hinf_norm(rd) == pytest.approx(hinf_norm(rp), rel=1e-9)


def test_hinf_below_gamma(case1_design, three_area, identity_out):
    gains, _ = case1_design
    r = build_closed_loop(realization_for(three_area, gains), gains, identity_out)
    assert hinf_norm(r) < 7.5 / 1.01


def test_dc_gain_floor_with_identity_weights(case1_design, separated_design, three_area, identity_out):
    # integral action forces dPm_i = dPv_i = d_i at steady state, so any
    # stabilizing design sees a DC gain of at least sqrt(2) from d to x
    for gains, _ in (case1_design, separated_design):
        rp, _ = restrict_to_invariant(build_closed_loop(three_area, gains, identity_out), three_area)
        dc = numlin.sigma_max(rp.Ccl @ numlin.solve_linear(-rp.Acl, rp.Bcl))
        assert dc >= np.sqrt(2) - 1e-9


def test_analysis_residual_negative(case1_design, strip_design, three_area, identity_out):
    for gains, _ in (case1_design, strip_design):
        real = realization_for(three_area, gains)
        res = analysis_lmi_residual(real, identity_out, gains, gains.stack("Z"), gains.stack("Q"),
                                    gains.spec)
        assert res < 0


def test_analysis_residual_positive_without_control(three_area, identity_out, case1_design):
    gains, _ = case1_design
    zero = GainSet([replace(a, K=np.zeros_like(a.K)) for a in gains.areas], meta=gains.meta)
    real = realization_for(three_area, gains)
    res = analysis_lmi_residual(real, identity_out, zero, np.eye(15), np.eye(15), CASE1)
    assert res > 0


def test_strip_containment_on_strip_design(strip_design, three_area):
    gains, _ = strip_design
    rep = check_strips(realization_for(three_area, gains), gains, RELAXED_STRIPS)
    assert rep["passed"]
    assert np.all(rep["control"]["eigenvalues"].real < -0.1)
    assert np.all(rep["observer"]["eigenvalues"].real > -40)


def test_corrupted_gain_fails_strips(strip_design, three_area):
    gains, _ = strip_design
    bad = scaled_gains(gains, 100.0)
    rep = check_strips(realization_for(three_area, bad), bad, RELAXED_STRIPS)
    assert not rep["control"]["passed"]
    assert not rep["passed"]


def test_case1_design_fails_case2_strips(case1_design, three_area):
    gains, _ = case1_design
    rep = check_strips(realization_for(three_area, gains), gains, CASE2_STRIPS)
    assert not rep["passed"]


def test_verify_report(case1_design, separated_design, three_area, identity_out):
    for gains, _ in (case1_design, separated_design):
        rep = verify_design(three_area, identity_out, gains)
        assert rep.passed, rep.failing()
        assert rep.flags["analysis_lmi"]
        assert rep.physical_spectrum.size == 29


def test_verify_flags_recomputable(case1_design, three_area, identity_out):
    gains, _ = case1_design
    rep = verify_design(three_area, identity_out, gains)
    assert rep.flags["stable"] == bool(np.max(rep.spectrum.real) < 0)
    assert rep.flags["hinf_below_gamma"] == (rep.hinf < rep.gamma)
    rows = rep.eigen_rows()
    assert {r[2] for r in rows} >= {"closed_loop", "control_with_interaction",
                                    "control_without_interaction", "observer"}
