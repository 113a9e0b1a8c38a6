"""Dense linear-algebra kernel.

Thin, checked wrappers around LAPACK (through numpy/scipy) for the four
operations the rest of the package relies on: nonsymmetric eigenvalues,
guarded linear solves, positive-definiteness certification and the
spectral norm. Every routine validates its input and fails loudly rather
than returning garbage.
"""

import warnings

import numpy as np
import scipy.linalg as sla

COND_CAP = 1e12
SYMMETRY_TOL = 1e-12
PIVOT_FLOOR = 1e-12


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a solve is requested on a (numerically) singular matrix."""

    def __init__(self, message, cond=np.inf):
        super().__init__(message)
        self.cond = cond


def _as_matrix(A, name="A", square=False):
    A = np.asarray(A)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={A.ndim}")
    if square and A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.iscomplexobj(A):
        A = A.astype(float, copy=False)
    return A


def eig(A):
    """Eigenvalues of a square real matrix.

    Parameters
    ----------
    A : (n, n) array_like
        Real square matrix with finite entries.

    Returns
    -------
    ndarray of complex, shape (n,)
        Eigenvalues with algebraic multiplicity, sorted by real part then
        imaginary part so that conjugate pairs sit next to each other.
    """
    A = _as_matrix(A, square=True)
    if A.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    w = sla.eigvals(A, check_finite=False).astype(complex)
    order = np.lexsort((w.imag, w.real))
    return w[order]


def condition_estimate(A):
    """Reciprocal-free 1-norm condition estimate of a square matrix."""
    A = _as_matrix(A, square=True)
    if A.shape[0] == 0:
        return 1.0
    lu, piv = _lu(A)
    return _cond_from_lu(A, lu)


def _lu(A):
    # singularity is judged by the condition estimate, not LAPACK's warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        return sla.lu_factor(A, check_finite=False)


def _cond_from_lu(A, lu):
    anorm = np.linalg.norm(A, 1)
    if anorm == 0.0 or np.any(np.diag(lu) == 0):
        return np.inf
    gecon, = sla.get_lapack_funcs(("gecon",), (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or rcond <= 0.0:
        return np.inf
    return 1.0 / rcond


def solve_linear(A, B, cond_cap=COND_CAP):
    """Solve ``A X = B`` with an LU factorization and a condition guard.

    Parameters
    ----------
    A : (n, n) array_like
        Square coefficient matrix (real or complex).
    B : (n,) or (n, k) array_like
        Right-hand side(s).
    cond_cap : float
        Largest accepted 1-norm condition estimate.

    Returns
    -------
    ndarray
        Solution with the same shape as ``B``.

    Raises
    ------
    SingularMatrixError
        If ``A`` is singular or its condition estimate exceeds ``cond_cap``.
    """
    A = _as_matrix(A, square=True)
    B_in = np.asarray(B)
    B2 = _as_matrix(B_in, name="B")
    if B2.shape[0] != A.shape[0]:
        raise ValueError(f"shape mismatch: A is {A.shape}, B has {B2.shape[0]} rows")
    lu, piv = _lu(A)
    cond = _cond_from_lu(A, lu)
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularMatrixError(
            f"matrix is singular to working precision (cond ~ {cond:.3g}, cap {cond_cap:.3g})",
            cond)
    X = sla.lu_solve((lu, piv), B2, check_finite=False)
    return X.reshape(B_in.shape) if B_in.ndim == 1 else X


def symmetrize(S, tol=SYMMETRY_TOL, name="S"):
    """Return ``(S + S.T)/2`` after checking the asymmetry is only rounding."""
    S = _as_matrix(S, name=name, square=True)
    scale = max(np.max(np.abs(S), initial=0.0), np.finfo(float).tiny)
    asym = np.max(np.abs(S - S.T), initial=0.0)
    if asym > tol * scale:
        raise ValueError(
            f"{name} is not symmetric: max |S - S^T| = {asym:.3g} (relative {asym / scale:.3g})")
    return 0.5 * (S + S.T)


def certify_pd(S, pivot_floor=PIVOT_FLOOR):
    """Certify that a symmetric matrix is positive definite.

    The matrix is symmetrized and factored as ``L L^T``; the certificate
    holds when the factorization completes and every pivot ``L_kk**2``
    exceeds ``pivot_floor * ||S||_2``.

    Returns
    -------
    bool
        ``True`` if ``S`` is certified positive definite, ``False`` otherwise.

    Raises
    ------
    ValueError
        On non-finite entries or asymmetry beyond rounding level.
    """
    S = symmetrize(S)
    n = S.shape[0]
    if n == 0:
        return True
    floor = pivot_floor * np.linalg.norm(S, 2)
    try:
        L = sla.cholesky(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return False
    pivots = np.diag(L) ** 2
    return bool(np.all(pivots > floor))


def sigma_max(M):
    """Largest singular value (spectral norm) of a real or complex matrix."""
    M = _as_matrix(M, name="M")
    if M.size == 0:
        return 0.0
    return float(sla.svdvals(M, check_finite=False)[0])


def lambda_max_sym(S):
    """Largest eigenvalue of a symmetric matrix (after a symmetry check)."""
    S = symmetrize(S)
    if S.shape[0] == 0:
        return -np.inf
    return float(sla.eigvalsh(S, check_finite=False)[-1])
