"""Structured LMI feasibility problems.

A problem is a list of affine symmetric matrix functions

    F_k(x) = F_k0 + sum_j x_j F_kj

of a decision vector ``x`` that parameterizes symmetric and rectangular
matrix blocks. :func:`solve_feasibility` looks for ``x`` with every
``F_k(x)`` negative definite by minimizing a common upper bound ``t`` on
their (equilibrated) largest eigenvalues. The interior-point work is done by
Clarabel through cvxpy; the returned point is then re-evaluated from the raw
problem data with :mod:`lfcsynth.numlin` before it is accepted.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import numlin


class SolverError(RuntimeError):
    """Numerical breakdown inside the SDP solver."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class VariableLayout:
    """Packing of named matrix blocks into one scalar decision vector.

    Symmetric blocks store their upper triangle (row-major), rectangular
    blocks all entries (row-major). Symmetric blocks come first.
    """

    sym_blocks: Tuple[Tuple[str, int], ...] = ()
    rect_blocks: Tuple[Tuple[str, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sym_blocks", tuple((str(n), int(d)) for n, d in self.sym_blocks))
        object.__setattr__(self, "rect_blocks",
                           tuple((str(n), int(r), int(c)) for n, r, c in self.rect_blocks))
        names = [b[0] for b in self.sym_blocks] + [b[0] for b in self.rect_blocks]
        if len(set(names)) != len(names):
            raise ValueError("variable block names must be unique")
        offsets = {}
        k = 0
        for name, d in self.sym_blocks:
            if d <= 0:
                raise ValueError(f"block {name} must have positive size")
            offsets[name] = k
            k += d * (d + 1) // 2
        for name, r, c in self.rect_blocks:
            if r <= 0 or c <= 0:
                raise ValueError(f"block {name} must have positive size")
            offsets[name] = k
            k += r * c
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_size", k)

    @property
    def size(self):
        """Total number of scalar decision variables."""
        return self._size

    def shape(self, name):
        for n, d in self.sym_blocks:
            if n == name:
                return (d, d)
        for n, r, c in self.rect_blocks:
            if n == name:
                return (r, c)
        raise KeyError(name)

    def is_symmetric(self, name):
        return any(n == name for n, _ in self.sym_blocks)

    def entries(self, name):
        """Yield ``(index, row, col)`` for each scalar of a block.

        For symmetric blocks only ``row <= col`` is listed; the scalar fills
        both ``(row, col)`` and ``(col, row)``.
        """
        k = self._offsets[name]
        r, c = self.shape(name)
        if self.is_symmetric(name):
            for i in range(r):
                for j in range(i, c):
                    yield k, i, j
                    k += 1
        else:
            for i in range(r):
                for j in range(c):
                    yield k, i, j
                    k += 1

    def unpack(self, x, name):
        """Matrix value of block ``name`` at decision vector ``x``."""
        x = np.asarray(x, dtype=float)
        r, c = self.shape(name)
        M = np.zeros((r, c))
        sym = self.is_symmetric(name)
        for k, i, j in self.entries(name):
            M[i, j] = x[k]
            if sym:
                M[j, i] = x[k]
        return M

    def pack(self, values):
        """Inverse of :meth:`unpack` for a full ``{name: matrix}`` mapping."""
        x = np.zeros(self.size)
        for name, M in values.items():
            M = np.asarray(M, dtype=float)
            for k, i, j in self.entries(name):
                x[k] = M[i, j]
        return x


class AffExpr:
    """Matrix-valued affine expression ``const + sum_k x_k lin[:, :, k]``.

    Used only while assembling problems; supports the handful of algebraic
    operations needed for block LMIs (sums, constant left/right products,
    transposes and scalar multiples).
    """

    __slots__ = ("const", "lin")
    __array_ufunc__ = None  # make ndarray @ AffExpr defer to __rmatmul__

    def __init__(self, const, lin):
        self.const = np.asarray(const, dtype=float)
        self.lin = np.asarray(lin, dtype=float)

    @classmethod
    def constant(cls, M, nvars):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M, np.zeros(M.shape + (nvars,)))

    @classmethod
    def variable(cls, layout: VariableLayout, name):
        r, c = layout.shape(name)
        lin = np.zeros((r, c, layout.size))
        sym = layout.is_symmetric(name)
        for k, i, j in layout.entries(name):
            lin[i, j, k] = 1.0
            if sym:
                lin[j, i, k] = 1.0
        return cls(np.zeros((r, c)), lin)

    @property
    def shape(self):
        return self.const.shape

    @property
    def T(self):
        return AffExpr(self.const.T, self.lin.transpose(1, 0, 2))

    def _coerce(self, other):
        if isinstance(other, AffExpr):
            return other
        return AffExpr.constant(other, self.lin.shape[2])

    def __add__(self, other):
        other = self._coerce(other)
        return AffExpr(self.const + other.const, self.lin + other.lin)

    __radd__ = __add__

    def __neg__(self):
        return AffExpr(-self.const, -self.lin)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, a):
        a = float(a)
        return AffExpr(a * self.const, a * self.lin)

    __rmul__ = __mul__

    def __matmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffExpr(self.const @ M, np.einsum("ijk,jl->ilk", self.lin, M))

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffExpr(M @ self.const, np.einsum("li,ijk->ljk", M, self.lin))

    def value(self, x):
        return self.const + self.lin @ np.asarray(x, dtype=float)


def he(X: AffExpr) -> AffExpr:
    """Hermitian part ``X + X^T``."""
    return X + X.T


@dataclass(frozen=True)
class AffineLmi:
    """Constraint ``F(x) = constant + sum_k x_k coeff_k`` negative definite.

    ``coeff`` stores every basis matrix column-wise as a sparse
    ``(dim*dim, nvars)`` array (row-major vectorization).
    """

    name: str
    dim: int
    constant: np.ndarray
    coeff: sp.csc_matrix

    def __post_init__(self):
        C0 = np.asarray(self.constant, dtype=float)
        if C0.shape != (self.dim, self.dim):
            raise ValueError(f"LMI {self.name}: constant has shape {C0.shape}, expected {(self.dim, self.dim)}")
        if not np.all(np.isfinite(C0)):
            raise ValueError(f"LMI {self.name}: constant has non-finite entries")
        if not np.array_equal(C0, C0.T):
            raise ValueError(f"LMI {self.name}: constant block is not symmetric")
        coeff = sp.csc_matrix(self.coeff)
        if coeff.shape[0] != self.dim * self.dim:
            raise ValueError(f"LMI {self.name}: coefficient array has {coeff.shape[0]} rows")
        if not np.all(np.isfinite(coeff.data)):
            raise ValueError(f"LMI {self.name}: coefficients have non-finite entries")
        # symmetry of every basis matrix: vec(B^T) is a row permutation of vec(B)
        perm = np.arange(self.dim * self.dim).reshape(self.dim, self.dim).T.ravel()
        diff = coeff[perm, :] - coeff
        if diff.nnz and np.max(np.abs(diff.data)) > 0:
            raise ValueError(f"LMI {self.name}: a basis matrix is not symmetric")
        C0.setflags(write=False)
        object.__setattr__(self, "constant", C0)
        object.__setattr__(self, "coeff", coeff)

    @property
    def nvars(self):
        return self.coeff.shape[1]

    @classmethod
    def from_expr(cls, name, expr: AffExpr, sym_tol=0.0):
        """Build from a square :class:`AffExpr` (symmetrized, with a check)."""
        C0 = expr.const
        L = expr.lin
        dim = C0.shape[0]
        if C0.shape != (dim, dim):
            raise ValueError(f"LMI {name}: expression is not square")
        asym = max(np.max(np.abs(C0 - C0.T), initial=0.0),
                   np.max(np.abs(L - L.transpose(1, 0, 2)), initial=0.0))
        scale = max(np.max(np.abs(C0), initial=0.0), np.max(np.abs(L), initial=0.0), 1.0)
        if asym > sym_tol * scale:
            raise ValueError(f"LMI {name}: expression is not symmetric (asymmetry {asym:.3g})")
        C0 = 0.5 * (C0 + C0.T)
        L = 0.5 * (L + L.transpose(1, 0, 2))
        return cls(name, dim, C0, sp.csc_matrix(L.reshape(dim * dim, -1)))

    @classmethod
    def from_blocks(cls, name, blocks, sizes, nvars):
        """Assemble a symmetric block matrix from its upper-triangle blocks.

        Parameters
        ----------
        name : str
            Label used in reports.
        blocks : dict
            ``{(i, j): AffExpr or ndarray}`` for ``i <= j``; missing blocks are
            zero. Blocks below the diagonal are filled by transposition.
        sizes : sequence of int
            Block sizes along the diagonal.
        nvars : int
            Number of scalar decision variables.
        """
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        dim = int(offs[-1])
        C0 = np.zeros((dim, dim))
        L = np.zeros((dim, dim, nvars))
        for (i, j), blk in blocks.items():
            if i > j:
                raise ValueError(f"LMI {name}: give upper-triangle blocks only, got ({i}, {j})")
            if not isinstance(blk, AffExpr):
                blk = AffExpr.constant(blk, nvars)
            if blk.shape != (sizes[i], sizes[j]):
                raise ValueError(f"LMI {name}: block ({i}, {j}) has shape {blk.shape}, "
                                 f"expected {(sizes[i], sizes[j])}")
            ri, rj = slice(offs[i], offs[i + 1]), slice(offs[j], offs[j + 1])
            C0[ri, rj] += blk.const
            L[ri, rj] += blk.lin
            if i != j:
                C0[rj, ri] += blk.const.T
                L[rj, ri] += blk.lin.transpose(1, 0, 2)
        return cls.from_expr(name, AffExpr(C0, L), sym_tol=1e-12)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return self.constant + (self.coeff @ x).reshape(self.dim, self.dim)

    def scaled(self, alpha):
        """The same constraint multiplied by ``alpha > 0``."""
        if not alpha > 0:
            raise ValueError("scale factor must be positive")
        return AffineLmi(self.name, self.dim, alpha * self.constant, alpha * self.coeff)

    def congruence(self, d):
        """``D F(x) D`` with ``D = diag(d)``; preserves definiteness."""
        d = np.asarray(d, dtype=float)
        dd = np.outer(d, d)
        C0 = dd * self.constant
        coeff = sp.diags(dd.ravel()) @ self.coeff
        return AffineLmi(self.name, self.dim, 0.5 * (C0 + C0.T), sp.csc_matrix(coeff))

    def equilibrator(self):
        """Diagonal congruence that brings diagonal data magnitudes to ~1."""
        diag_idx = np.arange(self.dim) * (self.dim + 1)
        mag = np.abs(np.diag(self.constant))
        cd = self.coeff[diag_idx, :]
        if cd.nnz:
            mag = np.maximum(mag, np.asarray(abs(cd).max(axis=1).todense()).ravel())
        d = np.ones(self.dim)
        pos = mag > 0
        d[pos] = 1.0 / np.sqrt(mag[pos])
        return d


@dataclass(frozen=True)
class FeasibilityProblem:
    """Find ``x`` with every LMI negative definite and ``Z >= pd_floor * I``
    for every symmetric block ``Z`` of the layout."""

    layout: VariableLayout
    lmis: Tuple[AffineLmi, ...]
    pd_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "lmis", tuple(self.lmis))
        for lmi in self.lmis:
            if lmi.nvars != self.layout.size:
                raise ValueError(f"LMI {lmi.name} has {lmi.nvars} variables, layout has {self.layout.size}")
        if self.pd_floor < 0:
            raise ValueError("pd_floor must be non-negative")

    def floor_lmis(self):
        """The constraints ``pd_floor * I - Z < 0``, one per symmetric block."""
        out = []
        for name, d in self.layout.sym_blocks:
            expr = -AffExpr.variable(self.layout, name) + self.pd_floor * np.eye(d)
            out.append(AffineLmi.from_expr(f"floor:{name}", expr))
        return out

    def all_lmis(self):
        return list(self.lmis) + self.floor_lmis()

    def scaled(self, alpha):
        return FeasibilityProblem(self.layout, [l.scaled(alpha) for l in self.lmis], self.pd_floor)


@dataclass
class SolverOptions:
    """Tolerances and budget for :func:`solve_feasibility`.

    ``feas_margin`` is the required margin ``-t`` in the equilibrated frame;
    ``pd_floor`` (when not ``None``) overrides the problem's floor.
    """

    feas_margin: float = 1e-7
    max_iter: int = 200
    tol: float = 1e-9
    t_lower: float = -1.0
    pd_floor: Optional[float] = None
    equilibrate: bool = True


@dataclass
class LmiSolution:
    """Result of a feasibility search.

    Attributes
    ----------
    feasible : bool
        ``True`` only if the scaled margin beats ``feas_margin`` and every raw
        LMI is independently certified negative definite.
    x : ndarray
        Best decision vector found.
    residuals : dict
        ``{lmi name: lambda_max(F(x))}`` on the raw (unscaled) data.
    scaled_margin : float
        Optimal ``t`` in the equilibrated frame (negative means strictly
        feasible).
    margin : float
        Largest raw residual.
    blocking : str
        Name of the LMI attaining the largest scaled residual.
    diagnostics : dict
        Solver status, iteration count and timing.
    """

    feasible: bool
    x: np.ndarray
    residuals: Dict[str, float]
    scaled_margin: float
    margin: float
    blocking: str
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def value(self, layout: VariableLayout, name):
        return layout.unpack(self.x, name)


def evaluate_residuals(p: FeasibilityProblem, x) -> Dict[str, float]:
    """Largest eigenvalue of every LMI (pd floors included) at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.layout.size,):
        raise ValueError(f"decision vector has shape {x.shape}, expected ({p.layout.size},)")
    return {lmi.name: numlin.lambda_max_sym(lmi.evaluate(x)) for lmi in p.all_lmis()}


def certify(p: FeasibilityProblem, x) -> bool:
    """Independent check that every LMI is negative definite at ``x``."""
    return all(numlin.certify_pd(-lmi.evaluate(x)) for lmi in p.all_lmis())


def solve_feasibility(p: FeasibilityProblem, opts: Optional[SolverOptions] = None) -> LmiSolution:
    """Search for a strictly feasible point of ``p``.

    Solves ``min t`` subject to ``D_k F_k(x) D_k <= t I`` for every LMI
    (``D_k`` a diagonal equilibrating congruence) and ``t >= t_lower``.

    Returns
    -------
    LmiSolution
        ``feasible`` is ``False`` when no point with margin better than
        ``opts.feas_margin`` was found within the iteration budget; the
        achieved margin and blocking LMI are reported either way.

    Raises
    ------
    SolverError
        If the solver breaks down or returns a non-finite iterate.
    """
    import cvxpy as cp

    opts = opts or SolverOptions()
    if opts.pd_floor is not None and opts.pd_floor != p.pd_floor:
        p = FeasibilityProblem(p.layout, p.lmis, opts.pd_floor)
    lmis = p.all_lmis()
    scaled = [l.congruence(l.equilibrator()) if opts.equilibrate else l for l in lmis]

    x = cp.Variable(p.layout.size)
    t = cp.Variable()
    cons = [t >= opts.t_lower]
    for l in scaled:
        # column-major reshape of the row-major vector yields F^T = F
        F = cp.reshape(l.constant.ravel() + l.coeff @ x, (l.dim, l.dim), order="F")
        cons.append(0.5 * (F + F.T) << t * np.eye(l.dim))
    prob = cp.Problem(cp.Minimize(t), cons)
    diag = {"solver": "CLARABEL"}
    try:
        with warnings.catch_warnings():
            # inaccurate termination is judged below from the returned point
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver="CLARABEL", max_iter=opts.max_iter, tol_gap_abs=opts.tol,
                       tol_gap_rel=opts.tol, tol_feas=opts.tol, verbose=False)
    except cp.error.SolverError as exc:
        raise SolverError(f"SDP solver failed: {exc}", diag) from exc
    stats = prob.solver_stats
    diag.update(status=prob.status, iterations=getattr(stats, "num_iters", None),
                solve_time=getattr(stats, "solve_time", None))
    if x.value is None or t.value is None or not np.all(np.isfinite(x.value)):
        raise SolverError(f"SDP solver returned no finite iterate (status {prob.status})", diag)

    xv = np.array(x.value, dtype=float)
    scaled_res = {l.name: numlin.lambda_max_sym(l.evaluate(xv)) for l in scaled}
    residuals = {l.name: numlin.lambda_max_sym(l.evaluate(xv)) for l in lmis}
    t_star = max(scaled_res.values())
    blocking = max(scaled_res, key=scaled_res.get)
    diag["t_solver"] = float(t.value)
    ok = (t_star < -opts.feas_margin and all(r < 0 for r in residuals.values())
          and certify(p, xv))
    return LmiSolution(bool(ok), xv, residuals, float(t_star), float(max(residuals.values())),
                       blocking, diag)


def dump_problem(p: FeasibilityProblem, fh):
    """Write the problem in a sparse text format.

    One line per nonzero of the upper triangle::

        lmi var row col value

    with 1-based ``lmi``, ``row`` and ``col``; ``var = 0`` denotes the
    constant matrix and ``var = k`` the coefficient of ``x_k`` (1-based).
    Constraints are ``F(x) < 0``; pd floors are included as ordinary LMIs.
    Lines starting with ``#`` are comments.
    """
    lmis = p.all_lmis()
    fh.write("# format-version: 1\n")
    fh.write(f"# nvars {p.layout.size} nlmis {len(lmis)}\n")
    for k, l in enumerate(lmis, start=1):
        fh.write(f"# lmi {k} {l.name} dim {l.dim}\n")
    for k, l in enumerate(lmis, start=1):
        n = l.dim
        rows, cols = np.nonzero(np.triu(l.constant))
        for r, c in zip(rows, cols):
            fh.write(f"{k} 0 {r + 1} {c + 1} {float(l.constant[r, c])!r}\n")
        coo = l.coeff.tocoo()
        r, c = np.divmod(coo.row, n)
        keep = r <= c
        order = np.lexsort((c[keep], r[keep], coo.col[keep]))
        for v, rr, cc, val in zip(coo.col[keep][order], r[keep][order], c[keep][order],
                                  coo.data[keep][order]):
            fh.write(f"{k} {v + 1} {rr + 1} {cc + 1} {float(val)!r}\n")


def load_dump(fh):
    """Read a dump back into ``(nvars, [(constant, [basis...]), ...])`` dense form."""
    nvars = None
    dims = []
    entries = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "nvars":
                nvars = int(parts[1])
            elif parts and parts[0] == "lmi":
                dims.append(int(parts[-1]))
            continue
        k, v, r, c, val = line.split()
        entries.append((int(k), int(v), int(r), int(c), float(val)))
    mats = [np.zeros((nvars + 1, d, d)) for d in dims]
    for k, v, r, c, val in entries:
        M = mats[k - 1][v]
        M[r - 1, c - 1] = val
        M[c - 1, r - 1] = val
    return nvars, mats
