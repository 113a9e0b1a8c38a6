import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lfcsynth import numlin
from lfcsynth.model import build_area

from conftest import THREE_AREA

# Eigenvalues of area 1's state matrix from the exact characteristic
# polynomial (rational arithmetic, pi kept symbolic) rooted with mpmath at
# 40 digits; independent of LAPACK.
AREA1_EIGS = np.array([
    -10.827417757403308291,
    -1.2404956555961080229 - 2.2050649603180515748j,
    -1.2404956555961080229 + 2.2050649603180515748j,
    -0.1249242647378089969,
    0.0,
])


def test_eig_identity():
    np.testing.assert_array_equal(numlin.eig(np.eye(3)), [1, 1, 1])


def test_eig_rotation():
    w = numlin.eig([[0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(w, [-1j, 1j], atol=1e-15)


def test_eig_area1_matches_polynomial_oracle():
    a = build_area(THREE_AREA[0], {1: 0.1986, 2: 0.2148})
    w = numlin.eig(a.A)
    np.testing.assert_allclose(w, AREA1_EIGS, atol=1e-10)


def test_eig_area1_live_polynomial_oracle():
    mpmath = pytest.importorskip("mpmath")
    from fractions import Fraction
    a = build_area(THREE_AREA[0], {1: 0.1986, 2: 0.2148})
    # Faddeev-LeVerrier on exact rationals of the float entries
    n = 5
    A = [[Fraction(float(v)) for v in row] for row in a.A]
    I = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    Mk = [[Fraction(0)] * n for _ in range(n)]
    coeffs = [Fraction(1)]
    for k in range(1, n + 1):
        AM = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        Mk = [[AM[i][j] + coeffs[-1] * I[i][j] for j in range(n)] for i in range(n)]
        AMk = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        coeffs.append(-sum(AMk[i][i] for i in range(n)) / k)
    mpmath.mp.dps = 40
    roots = mpmath.polyroots([mpmath.mpf(c.numerator) / c.denominator for c in coeffs],
                             maxsteps=200, extraprec=200)
    ref = np.array(sorted((complex(r) for r in roots), key=lambda z: (round(z.real, 9), z.imag)))
    np.testing.assert_allclose(numlin.eig(a.A), ref, atol=1e-10)


def test_solve_identity_and_diagonal():
    B = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(numlin.solve_linear(np.eye(3), B), B)
    np.testing.assert_allclose(numlin.solve_linear(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])


def test_solve_random_multiply_back(rng):
    A = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    B = rng.standard_normal((8, 3))
    X = numlin.solve_linear(A, B)
    assert np.linalg.norm(A @ X - B) <= 1e-12 * np.linalg.norm(A) * np.linalg.norm(X)


def test_solve_singular_raises():
    with pytest.raises(numlin.SingularMatrixError):
        numlin.solve_linear([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    with pytest.raises(numlin.SingularMatrixError):
        numlin.solve_linear(np.diag([1.0, 1e-14]), [1.0, 1.0])


def test_solve_shape_and_finite_checks():
    with pytest.raises(ValueError):
        numlin.solve_linear(np.eye(3), np.ones(2))
    with pytest.raises(ValueError):
        numlin.solve_linear([[np.nan, 0], [0, 1]], [1.0, 1.0])
    with pytest.raises(ValueError):
        numlin.eig(np.ones((2, 3)))


def test_certify_pd_examples():
    assert numlin.certify_pd(np.eye(4))
    assert not numlin.certify_pd(np.diag([1.0, -1.0]))
    assert not numlin.certify_pd(np.diag([1.0, 0.0]))
    assert not numlin.certify_pd(np.diag([1.0, 1e-14]))


def test_certify_pd_rejects_asymmetry_and_nonfinite():
    with pytest.raises(ValueError, match="not symmetric"):
        numlin.certify_pd([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValueError):
        numlin.certify_pd([[np.inf, 0.0], [0.0, 1.0]])
    # rounding-level asymmetry is tolerated
    assert numlin.certify_pd([[1.0, 0.1], [0.1 + 1e-17, 1.0]])


def test_sigma_max_examples(rng):
    assert numlin.sigma_max(np.eye(2)) == pytest.approx(1.0)
    assert numlin.sigma_max(np.diag([3.0, -5.0])) == pytest.approx(5.0)
    M = rng.standard_normal((4, 3))
    lam = numlin.eig(M.T @ M)
    assert numlin.sigma_max(M) == pytest.approx(np.sqrt(np.max(lam.real)), rel=1e-12)


def test_eig_conjugate_pairs_adjacent(rng):
    A = rng.standard_normal((7, 7))
    w = numlin.eig(A)
    cplx = w[np.abs(w.imag) > 1e-12]
    np.testing.assert_allclose(np.sort_complex(cplx), np.sort_complex(cplx.conj()), atol=1e-12)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 6), elements=finite))
def test_property_trace_identity(A):
    w = numlin.eig(A)
    assert abs(np.sum(w).real - np.trace(A)) <= 1e-6 * max(np.linalg.norm(A), 1.0)
    assert abs(np.sum(w).imag) <= 1e-6 * max(np.linalg.norm(A), 1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 5), elements=finite))
def test_property_certify_pd_implies_positive_spectrum(X):
    S = 0.5 * (X + X.T)
    if numlin.certify_pd(S):
        assert np.all(numlin.eig(S).real > 0)
