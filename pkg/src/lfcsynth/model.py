"""Per-area and composite state-space models of an interconnected grid.

Each control area carries five states in the fixed order

    [df, dPm, dPv, dPtie, int_ACE]

(frequency deviation, turbine mechanical power, governor valve position,
tie-line power and the integral of the area control error). Areas couple
only through the tie-line row, via the frequency deviations of their
neighbours.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla

N_STATE = 5
N_INPUT = 1
N_DIST = 1
N_OUTPUT = 3

STATE_NAMES = ("df", "dPm", "dPv", "dPtie", "ace_int")
IDX_DF, IDX_PM, IDX_PV, IDX_TIE, IDX_ACE = range(N_STATE)
MEASURED = (IDX_DF, IDX_TIE, IDX_ACE)


class ParameterError(ValueError):
    """Invalid physical parameter or malformed model input."""


@dataclass(frozen=True)
class AreaParams:
    """Physical parameters of one control area.

    Attributes
    ----------
    M : inertia constant (p.u. s^2)
    D : load damping (p.u./Hz)
    T_g : governor time constant (s)
    T_ch : turbine time constant (s)
    R : speed droop (Hz/p.u.)
    beta : frequency bias factor (p.u./Hz)
    """

    M: float
    D: float
    T_g: float
    T_ch: float
    R: float
    beta: float

    def __post_init__(self):
        for name in ("M", "D", "T_g", "T_ch", "R", "beta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool):
                raise ParameterError(f"{name} must be a real number, got {v!r}")
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v!r}")
        for name in ("M", "T_g", "T_ch", "R", "beta"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.D < 0:
            raise ParameterError(f"D must be non-negative, got {self.D!r}")


@dataclass(frozen=True)
class TieLineMatrix:
    """Symmetric matrix of tie-line synchronizing coefficients (p.u./rad)."""

    T: np.ndarray

    def __post_init__(self):
        T = np.array(self.T, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ParameterError(f"tie-line matrix must be square, got shape {T.shape}")
        if not np.all(np.isfinite(T)):
            raise ParameterError("tie-line matrix has non-finite entries")
        if np.any(np.diag(T) != 0):
            raise ParameterError("tie-line matrix must have a zero diagonal")
        if not np.array_equal(T, T.T):
            raise ParameterError("tie-line matrix must be symmetric")
        if np.any(T < 0):
            raise ParameterError("tie-line coefficients must be non-negative")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @classmethod
    def from_upper(cls, n_areas, entries):
        """Build from ``{(i, j): T_ij}`` with zero-based ``i < j``."""
        T = np.zeros((n_areas, n_areas))
        for (i, j), v in entries.items():
            if not (0 <= i < n_areas and 0 <= j < n_areas) or i == j:
                raise ParameterError(f"invalid tie-line pair ({i}, {j})")
            if T[i, j] != 0 and T[i, j] != v:
                raise ParameterError(f"tie-line pair ({i}, {j}) given twice")
            T[i, j] = T[j, i] = v
        return cls(T)

    @property
    def n_areas(self):
        return self.T.shape[0]

    def row(self, i):
        """Coefficients ``{j: T_ij}`` for every ``j != i``."""
        return {j: float(self.T[i, j]) for j in range(self.n_areas) if j != i}


@dataclass(frozen=True)
class AreaMatrices:
    """State-space matrices of one area and its interaction blocks."""

    A: np.ndarray
    dAij: Dict[int, np.ndarray]
    B: np.ndarray
    F: np.ndarray
    C: np.ndarray
    params: Optional[AreaParams] = None


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


def build_area(params: AreaParams, tie_row: Mapping[int, float]) -> AreaMatrices:
    """Assemble the five-state model of one area.

    Parameters
    ----------
    params : AreaParams
        Physical parameters of the area.
    tie_row : mapping
        ``{j: T_ij}`` for every other area ``j`` (coefficients may be zero).

    Returns
    -------
    AreaMatrices
    """
    if not isinstance(params, AreaParams):
        raise ParameterError("params must be an AreaParams instance")
    for j, t in tie_row.items():
        if not np.isfinite(t) or t < 0:
            raise ParameterError(f"tie-line coefficient T[{j}] must be finite and >= 0, got {t!r}")
    p = params
    two_pi = 2.0 * np.pi
    A = np.zeros((N_STATE, N_STATE))
    A[0, 0] = -p.D / p.M
    A[0, 1] = 1.0 / p.M
    A[0, 3] = -1.0 / p.M
    A[1, 1] = -1.0 / p.T_ch
    A[1, 2] = 1.0 / p.T_ch
    A[2, 0] = -1.0 / (p.R * p.T_g)
    A[2, 2] = -1.0 / p.T_g
    A[3, 0] = two_pi * sum(tie_row.values())
    A[4, 0] = p.beta
    A[4, 3] = 1.0

    dAij = {}
    for j, t in sorted(tie_row.items()):
        dA = np.zeros((N_STATE, N_STATE))
        dA[3, 0] = -two_pi * t
        dAij[j] = _frozen(dA)

    B = np.zeros((N_STATE, N_INPUT))
    B[2, 0] = 1.0 / p.T_g
    F = np.zeros((N_STATE, N_DIST))
    F[0, 0] = -1.0 / p.M
    C = np.zeros((N_OUTPUT, N_STATE))
    for r, k in enumerate(MEASURED):
        C[r, k] = 1.0
    return AreaMatrices(_frozen(A), dAij, _frozen(B), _frozen(F), _frozen(C), params)


@dataclass(frozen=True)
class CompositeSystem:
    """Block-diagonal composite model plus the interaction matrix.

    ``A`` holds the diagonal (per-area) blocks and ``dA`` the off-diagonal
    coupling; the plant is ``x' = (A + dA) x + B u + F d``, ``y = C x``.

    ``tie_mode_rate`` is zero for the physical model. A positive value marks
    a design realization in which the conserved tie-line mode has been moved
    to ``-tie_mode_rate`` (see :func:`design_realization`).
    """

    areas: List[AreaMatrices]
    A: np.ndarray
    dA: np.ndarray
    B: np.ndarray
    F: np.ndarray
    C: np.ndarray
    tie_mode_rate: float = 0.0

    @property
    def N(self):
        return len(self.areas)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.F.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def state_slice(self, i):
        return slice(N_STATE * i, N_STATE * (i + 1))

    def area_A(self, i):
        """Diagonal block ``i`` of ``A`` (includes any design shift)."""
        s = self.state_slice(i)
        return self.A[s, s]

    def area_B(self, i):
        return self.B[self.state_slice(i), i:i + 1]

    def area_F(self, i):
        return self.F[self.state_slice(i), i:i + 1]

    def area_C(self, i):
        return self.C[N_OUTPUT * i:N_OUTPUT * (i + 1), self.state_slice(i)]

    def dA_block(self, i, j):
        return self.dA[self.state_slice(i), self.state_slice(j)]

    def area_system(self, i):
        """Area ``i`` alone as a one-area composite (interactions dropped)."""
        a = self.areas[i]
        local = AreaMatrices(self.area_A(i), {}, a.B, a.F, a.C, a.params)
        return build_composite([local])


def build_composite(areas: Sequence[AreaMatrices], T: Optional[TieLineMatrix] = None):
    """Stack per-area models into the composite system.

    Parameters
    ----------
    areas : sequence of AreaMatrices
        One entry per area, in area order.
    T : TieLineMatrix, optional
        If given, the interaction blocks of each area are checked against it.

    Returns
    -------
    CompositeSystem
    """
    areas = list(areas)
    N = len(areas)
    if N == 0:
        raise ParameterError("at least one area is required")
    if T is not None and T.n_areas != N:
        raise ParameterError(f"tie-line matrix is {T.n_areas}x{T.n_areas} but {N} areas given")
    A = sla.block_diag(*[a.A for a in areas])
    B = sla.block_diag(*[a.B for a in areas])
    F = sla.block_diag(*[a.F for a in areas])
    C = sla.block_diag(*[a.C for a in areas])
    dA = np.zeros_like(A)
    for i, a in enumerate(areas):
        for j, blk in a.dAij.items():
            if not 0 <= j < N or j == i:
                raise ParameterError(f"area {i} has an interaction block for invalid area {j}")
            if T is not None and blk[3, 0] != -2.0 * np.pi * T.T[i, j]:
                raise ParameterError(f"interaction block ({i}, {j}) disagrees with tie-line matrix")
            dA[N_STATE * i:N_STATE * (i + 1), N_STATE * j:N_STATE * (j + 1)] = blk
    return CompositeSystem(areas, _frozen(A), _frozen(dA), _frozen(B), _frozen(F), _frozen(C))


def build_system(params: Sequence[AreaParams], T: TieLineMatrix) -> CompositeSystem:
    """Convenience wrapper: parameters plus tie-lines to composite system."""
    if len(params) != T.n_areas:
        raise ParameterError(f"{len(params)} areas but tie-line matrix is {T.n_areas}x{T.n_areas}")
    return build_composite([build_area(p, T.row(i)) for i, p in enumerate(params)], T)


@dataclass(frozen=True)
class OutputSelection:
    """Performance output ``z = Cx x + Ce e`` (both n x n, block-diagonal)."""

    Cx: np.ndarray
    Ce: np.ndarray
    block: int = N_STATE

    def __post_init__(self):
        for name in ("Cx", "Ce"):
            M = np.array(getattr(self, name), dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ParameterError(f"{name} must be square, got shape {M.shape}")
            if not np.all(np.isfinite(M)):
                raise ParameterError(f"{name} has non-finite entries")
            if M.shape[0] % self.block:
                raise ParameterError(f"{name} size {M.shape[0]} is not a multiple of {self.block}")
            mask = np.kron(np.eye(M.shape[0] // self.block), np.ones((self.block, self.block)))
            if np.any(M[mask == 0] != 0):
                raise ParameterError(f"{name} must be block-diagonal with {self.block}x{self.block} blocks")
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        if self.Cx.shape != self.Ce.shape:
            raise ParameterError("Cx and Ce must have the same size")

    def area_blocks(self, i):
        s = slice(self.block * i, self.block * (i + 1))
        return self.Cx[s, s], self.Ce[s, s]


def default_output_selection(sys: CompositeSystem) -> OutputSelection:
    """Identity weights on every state and every estimation error."""
    return OutputSelection(np.eye(sys.n), np.eye(sys.n))


def output_selection(sys: CompositeSystem, state_weights=1.0, error_weights=1.0):
    """Diagonal output weights.

    Each weight argument may be a scalar, a length-5 vector applied to every
    area, or a length-n vector.
    """
    def expand(w, name):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if w.size == 1:
            w = np.full(sys.n, w[0])
        elif w.size == N_STATE:
            w = np.tile(w, sys.N)
        elif w.size != sys.n:
            raise ParameterError(f"{name} must have 1, {N_STATE} or {sys.n} entries, got {w.size}")
        return np.diag(w)
    return OutputSelection(expand(state_weights, "state_weights"), expand(error_weights, "error_weights"))


def conserved_modes(sys: CompositeSystem, tol=1e-10):
    """Orthonormal basis of left null vectors of ``[A + dA, B]``.

    A vector ``w`` in this set gives a quantity ``w^T x`` that no feedback
    can move: it is an exact closed-loop eigenvalue at zero for any
    controller and observer gains. For interconnected areas the sum of all
    tie-line flows is such a quantity.

    Returns
    -------
    ndarray, shape (n, k)
    """
    M = np.hstack([sys.A + sys.dA, sys.B])
    U, s, _ = np.linalg.svd(M)
    scale = max(s[0] if s.size else 0.0, 1.0)
    rank = int(np.sum(s > tol * scale))
    W = U[:, rank:].copy()
    for k in range(W.shape[1]):
        if W[np.argmax(np.abs(W[:, k])), k] < 0:
            W[:, k] = -W[:, k]
    return W


def design_realization(sys: CompositeSystem, rate: float) -> CompositeSystem:
    """Move every conserved mode of ``A + dA`` from zero to ``-rate``.

    The shift ``S = -rate * W W^T`` (``W`` from :func:`conserved_modes`) is
    split into its diagonal blocks, added to ``A``, and its off-diagonal
    blocks, added to ``dA``. On the invariant subspace ``{x : W^T x = 0}``
    (where every trajectory from rest lives, since ``W^T F = 0``) the
    dynamics are unchanged. The shift depends only on the projector
    ``W W^T``, so the choice of basis does not matter.
    """
    if rate < 0 or not np.isfinite(rate):
        raise ParameterError(f"tie-mode rate must be finite and >= 0, got {rate!r}")
    if sys.tie_mode_rate:
        raise ParameterError("system is already a shifted design realization")
    W = conserved_modes(sys)
    if rate == 0 or W.shape[1] == 0:
        return sys
    S = -rate * (W @ W.T)
    S[np.abs(S) < 1e-13 * rate] = 0.0
    mask = np.kron(np.eye(sys.N), np.ones((N_STATE, N_STATE)))
    A = sys.A + S * mask
    dA = sys.dA + S * (1 - mask)
    return CompositeSystem(sys.areas, _frozen(A), _frozen(dA), sys.B, sys.F, sys.C, float(rate))
