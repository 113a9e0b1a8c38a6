import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfcsynth import numlin
from lfcsynth.sdp import (AffExpr, AffineLmi, FeasibilityProblem, SolverOptions, VariableLayout,
                          certify, dump_problem, evaluate_residuals, he, load_dump,
                          solve_feasibility)
from lfcsynth.synthesis import build_design_problem

from conftest import CASE1


def scalar_layout():
    return VariableLayout((), (("x", 1, 1),))


def interval_problem():
    lay = scalar_layout()
    x = AffExpr.variable(lay, "x")
    F = AffineLmi.from_blocks("interval", {(0, 0): x - 1.0, (1, 1): -x - 1.0}, (1, 1), lay.size)
    return FeasibilityProblem(lay, [F], pd_floor=0.0)


def test_layout_counts():
    lay = VariableLayout((("Z", 5), ("Q", 5)), (("M1", 1, 5), ("M2", 5, 3)))
    assert lay.size == 15 + 15 + 5 + 15
    M = np.arange(25.0).reshape(5, 5)
    M = M + M.T
    x = lay.pack({"Z": M})
    np.testing.assert_array_equal(lay.unpack(x, "Z"), M)
    with pytest.raises(ValueError):
        VariableLayout((("Z", 2), ("Z", 3)))


def test_affexpr_algebra():
    lay = VariableLayout((("Z", 2),), (("M", 1, 2),))
    Z = AffExpr.variable(lay, "Z")
    M = AffExpr.variable(lay, "M")
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[0.0], [1.0]])
    e = he(A @ Z - B @ M)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(lay.size)
    Zv, Mv = lay.unpack(x, "Z"), lay.unpack(x, "M")
    ref = A @ Zv - B @ Mv
    np.testing.assert_allclose(e.value(x), ref + ref.T, atol=1e-14)
    np.testing.assert_allclose((2.0 * Z @ A).value(x), 2 * Zv @ A)


def test_lmi_symmetry_enforced():
    with pytest.raises(ValueError, match="symmetric"):
        AffineLmi("bad", 2, np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((4, 1)))


def test_interval_feasibility():
    sol = solve_feasibility(interval_problem())
    assert sol.feasible
    assert -1 < sol.x[0] < 1
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)
    assert sol.margin == pytest.approx(-1.0, abs=1e-6)


def test_shifted_identity_feasible_with_floor_block():
    lay = VariableLayout((("D", 1),), (("x", 1, 1),))
    x = AffExpr.variable(lay, "x")
    F = AffineLmi.from_blocks("xI+I", {(0, 0): x + 1.0, (1, 1): x + 1.0}, (1, 1), lay.size)
    sol = solve_feasibility(FeasibilityProblem(lay, [F], pd_floor=1e-3))
    assert sol.feasible
    assert sol.x[lay.size - 1] < -1
    assert lay.unpack(sol.x, "D")[0, 0] > 1e-3


def test_infeasible_reported_with_margin_and_blocking():
    lay = scalar_layout()
    x = AffExpr.variable(lay, "x")
    F = AffineLmi.from_blocks("gap", {(0, 0): x + 1.0, (1, 1): -x + 1.0}, (1, 1), lay.size)
    sol = solve_feasibility(FeasibilityProblem(lay, [F], 0.0))
    assert not sol.feasible
    assert sol.scaled_margin == pytest.approx(1.0, abs=1e-6)
    assert sol.blocking == "gap"


def test_budget_exhaustion_is_not_success(three_area, identity_out):
    from lfcsynth.model import design_realization
    _, _, prob = build_design_problem(design_realization(three_area, 2.0), identity_out, CASE1)
    sol = solve_feasibility(prob, SolverOptions(max_iter=2))
    assert not sol.feasible
    assert sol.diagnostics["iterations"] <= 2


def test_hand_residual():
    lay = scalar_layout()
    x = AffExpr.variable(lay, "x")
    F = AffineLmi.from_expr("hand", AffExpr(np.array([[1.0, 2.0], [2.0, -3.0]]),
                                            np.array([[[1.0], [0.0]], [[0.0], [0.0]]])))
    p = FeasibilityProblem(lay, [F], 0.0)
    r = evaluate_residuals(p, np.array([-2.0]))
    # [[-1, 2], [2, -3]] has eigenvalues -2 +/- sqrt(5)
    assert r["hand"] == pytest.approx(-2 + np.sqrt(5), rel=1e-14)


def test_zero_point_violates_floor(three_area, identity_out):
    _, lay, prob = build_design_problem(three_area, identity_out, CASE1)
    r = evaluate_residuals(prob, np.zeros(lay.size))
    assert max(r.values()) >= 0
    assert r["floor:Z1"] == pytest.approx(1e-6)


def test_certificate_reverification(case1_design):
    gains, sol = case1_design
    assert sol.feasible and all(v < 0 for v in sol.residuals.values())


def random_problem(seed, n=4, k=3):
    rng = np.random.default_rng(seed)
    lay = VariableLayout((), (("x", 1, k),))
    basis = []
    for _ in range(k):
        M = rng.standard_normal((n, n))
        basis.append(M + M.T)
    C0 = -np.eye(n) * 3 + 0.3 * (lambda M: M + M.T)(rng.standard_normal((n, n)))
    L = np.stack(basis, axis=2)
    F = AffineLmi.from_expr("rand", AffExpr(C0, L))
    return FeasibilityProblem(lay, [F], 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_property_scaling_equivariance(seed, alpha):
    p = random_problem(seed)
    sol = solve_feasibility(p)
    if not sol.feasible:
        return
    ps = p.scaled(alpha)
    r = evaluate_residuals(p, sol.x)
    rs = evaluate_residuals(ps, sol.x)
    for k in r:
        assert rs[k] == pytest.approx(alpha * r[k], rel=1e-9, abs=1e-12)
    assert certify(ps, sol.x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_property_certificate_soundness(seed):
    p = random_problem(seed)
    sol = solve_feasibility(p)
    if sol.feasible:
        for lmi in p.all_lmis():
            assert numlin.certify_pd(-lmi.evaluate(sol.x))
        again = evaluate_residuals(p, sol.x)
        for k, v in again.items():
            assert abs(v - sol.residuals[k]) <= 1e-9


def test_determinism():
    a = solve_feasibility(random_problem(7))
    b = solve_feasibility(random_problem(7))
    np.testing.assert_array_equal(a.x, b.x)


def test_dump_roundtrip(three_area, identity_out):
    _, lay, prob = build_design_problem(three_area, identity_out, CASE1)
    buf = io.StringIO()
    dump_problem(prob, buf)
    text = buf.getvalue()
    assert text.startswith("# format-version: 1\n")
    buf.seek(0)
    nvars, mats = load_dump(buf)
    assert nvars == lay.size == 150
    x = np.random.default_rng(3).standard_normal(nvars)
    for lmi, M in zip(prob.all_lmis(), mats):
        F = M[0] + np.tensordot(x, M[1:], axes=1)
        np.testing.assert_allclose(F, lmi.evaluate(x), rtol=0, atol=1e-12)
