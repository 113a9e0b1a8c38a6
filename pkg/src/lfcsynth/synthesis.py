"""Observer-based decentralized controller synthesis.

Each area runs a disturbance-decoupled observer

    z' = Phi z + G u + L y,    x_hat = z + H y,    u = -K x_hat

and all observer and controller gains are found together from one LMI in
the variables ``Z_i, Q_i`` (symmetric) and ``M1_i, M2_i`` (rectangular),
with ``K_i = M1_i Z_i^-1`` and ``L1_i = Q_i^-1 M2_i``. Optional vertical
strip constraints place the closed-loop spectra inside ``a < Re(s) < b``.

A separated baseline designs each area on its own, treating the tie-line
interaction as an extra disturbance on the tie-line state.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from . import numlin
from .model import (N_OUTPUT, N_STATE, IDX_TIE, CompositeSystem, OutputSelection,
                    ParameterError, design_realization)
from .sdp import (AffExpr, AffineLmi, FeasibilityProblem, LmiSolution, SolverOptions,
                  VariableLayout, he, solve_feasibility)


class DecouplingError(ValueError):
    """``C F`` lacks full column rank, so no decoupling gain exists."""


class InfeasibleDesign(RuntimeError):
    """The LMI search found no strictly feasible point within budget."""

    def __init__(self, message, solutions):
        super().__init__(message)
        self.solutions = solutions if isinstance(solutions, list) else [solutions]

    @property
    def margin(self):
        return max(s.scaled_margin for s in self.solutions)


class CertificateError(RuntimeError):
    """Recovered gains could not be formed from the solver output."""


@dataclass(frozen=True)
class Strip:
    """Vertical strip ``a < Re(s) < b`` in the left half plane."""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ParameterError("strip bounds must be finite")
        if not (self.a < self.b < 0):
            raise ParameterError(f"strip bounds need a < b < 0, got a={self.a}, b={self.b}")

    def contains(self, re, slack=0.0):
        return (re > self.a + slack) & (re < self.b - slack)


@dataclass(frozen=True)
class StripSpec:
    """Per-area strips for the control loop and the observer."""

    control: Tuple[Strip, ...]
    observer: Tuple[Strip, ...]

    @classmethod
    def uniform(cls, n_areas, control, observer):
        return cls(tuple(Strip(*control) for _ in range(n_areas)),
                   tuple(Strip(*observer) for _ in range(n_areas)))

    def composite_control(self):
        """Widest strip covering every area's control strip."""
        return Strip(min(s.a for s in self.control), max(s.b for s in self.control))


@dataclass(frozen=True)
class DesignSpec:
    """Performance level ``gamma``, relaxation scalars and optional strips.

    ``tie_mode_rate`` is the rate assigned to the conserved tie-line mode in
    the design realization (0 designs on the physical model directly).
    """

    gamma: float
    eps1: float
    eps2: float
    strips: Optional[StripSpec] = None
    tie_mode_rate: float = 2.0

    def __post_init__(self):
        for name in ("gamma", "eps1", "eps2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be a positive finite number, got {v!r}")
        if not (np.isfinite(self.tie_mode_rate) and self.tie_mode_rate >= 0):
            raise ParameterError("tie_mode_rate must be finite and >= 0")

    def to_dict(self):
        d = {"gamma": self.gamma, "eps1": self.eps1, "eps2": self.eps2,
             "tie_mode_rate": self.tie_mode_rate, "strips": None}
        if self.strips is not None:
            d["strips"] = {"control": [[s.a, s.b] for s in self.strips.control],
                           "observer": [[s.a, s.b] for s in self.strips.observer]}
        return d

    @classmethod
    def from_dict(cls, d):
        strips = None
        if d.get("strips"):
            s = d["strips"]
            strips = StripSpec(tuple(Strip(*ab) for ab in s["control"]),
                               tuple(Strip(*ab) for ab in s["observer"]))
        return cls(d["gamma"], d["eps1"], d["eps2"], strips, d.get("tie_mode_rate", 0.0))


@dataclass(frozen=True)
class AreaGains:
    """Observer and controller gains of one area."""

    K: np.ndarray
    H: np.ndarray
    Psi: np.ndarray
    Phi: np.ndarray
    G: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L: np.ndarray
    Z: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None

    FIELDS = ("K", "H", "Psi", "Phi", "G", "L1", "L2", "L", "Z", "Q")


@dataclass
class GainSet:
    """Gains of every area plus the metadata needed to replay the design."""

    areas: List[AreaGains]
    strategy: str = "integrated"
    spec: Optional[DesignSpec] = None
    meta: Dict[str, object] = field(default_factory=dict)

    @property
    def N(self):
        return len(self.areas)

    def stack(self, name):
        """Block-diagonal composite of one gain, e.g. ``stack("K")``."""
        return sla.block_diag(*[getattr(a, name) for a in self.areas])


def compute_disturbance_decoupler(C_i, F_i):
    """Gain ``H`` with ``(I - H C) F = 0``.

    Uses ``H = F [(C F)^T (C F)]^-1 (C F)^T`` with the inverse applied by a
    linear solve.

    Returns
    -------
    H : ndarray, shape (n_i, p_i)
    Psi : ndarray, shape (n_i, n_i)
        ``I - H C``.

    Raises
    ------
    DecouplingError
        If ``C F`` does not have full column rank.
    """
    C_i = np.atleast_2d(np.asarray(C_i, dtype=float))
    F_i = np.asarray(F_i, dtype=float).reshape(C_i.shape[1], -1)
    n = C_i.shape[1]
    if not np.any(F_i):
        return np.zeros((n, C_i.shape[0])), np.eye(n)
    CF = C_i @ F_i
    if np.linalg.matrix_rank(CF) < F_i.shape[1]:
        raise DecouplingError("rank(C F) < rank(F): the disturbance cannot be decoupled")
    try:
        X = numlin.solve_linear(CF.T @ CF, CF.T)
    except numlin.SingularMatrixError as exc:
        raise DecouplingError(f"C F is numerically rank deficient: {exc}") from exc
    H = F_i @ X
    return H, np.eye(n) - H @ C_i


def decouplers_for(sys: CompositeSystem):
    return [compute_disturbance_decoupler(sys.area_C(i), sys.area_F(i)) for i in range(sys.N)]


def design_layout(sys: CompositeSystem) -> VariableLayout:
    N, ni, mi, pi = sys.N, N_STATE, sys.m // sys.N, N_OUTPUT
    sym = [(f"Z{i + 1}", ni) for i in range(N)] + [(f"Q{i + 1}", ni) for i in range(N)]
    rect = ([(f"M1_{i + 1}", mi, ni) for i in range(N)]
            + [(f"M2_{i + 1}", ni, pi) for i in range(N)])
    return VariableLayout(tuple(sym), tuple(rect))


def _blockdiag_expr(layout, names, shapes):
    """Block-diagonal AffExpr whose diagonal blocks are the named variables."""
    rows = sum(s[0] for s in shapes)
    cols = sum(s[1] for s in shapes)
    const = np.zeros((rows, cols))
    lin = np.zeros((rows, cols, layout.size))
    r = c = 0
    for name, (h, w) in zip(names, shapes):
        v = AffExpr.variable(layout, name)
        lin[r:r + h, c:c + w] = v.lin
        r += h
        c += w
    return AffExpr(const, lin)


def _composite_vars(sys, layout):
    N = sys.N
    mi = sys.m // N
    Z = _blockdiag_expr(layout, [f"Z{i + 1}" for i in range(N)], [(N_STATE, N_STATE)] * N)
    Q = _blockdiag_expr(layout, [f"Q{i + 1}" for i in range(N)], [(N_STATE, N_STATE)] * N)
    M1 = _blockdiag_expr(layout, [f"M1_{i + 1}" for i in range(N)], [(mi, N_STATE)] * N)
    M2 = _blockdiag_expr(layout, [f"M2_{i + 1}" for i in range(N)], [(N_STATE, N_OUTPUT)] * N)
    return Z, Q, M1, M2


def assemble_design_lmi(sys: CompositeSystem, out: OutputSelection, spec: DesignSpec,
                        decouplers, layout: Optional[VariableLayout] = None,
                        disturbance: Optional[np.ndarray] = None) -> AffineLmi:
    """Joint observer/controller H-infinity LMI (8 x 8 blocks).

    Block sizes are ``(n, n, q, n, n, n, n, n)``. With ``Psi = diag(Psi_i)``:

    * (1,1) ``He(A Z - B M1 + dA Z)``, (1,3) ``F``, (1,4) ``Z Cx^T``,
      (1,5) ``(dA Z)^T``, (1,7) ``B M1``;
    * (2,2) ``He(Q Psi A - M2 C)``, (2,4) ``Ce^T``, (2,6) ``Q Psi``, (2,8) ``I``;
    * (3,3) ``-gamma^2 I``, (4,4) ``-I``, (5,5) ``-eps1 I``,
      (6,6) ``-I/eps1``, (7,7) ``-Z/eps2``, (8,8) ``-eps2 Z``.

    ``disturbance`` replaces ``F`` in block (1,3) (used by the separated
    baseline to append an interaction channel).
    """
    layout = layout or design_layout(sys)
    nv = layout.size
    n = sys.n
    Z, Q, M1, M2 = _composite_vars(sys, layout)
    Psi = sla.block_diag(*[P for _, P in decouplers])
    A, dA, B, C = sys.A, sys.dA, sys.B, sys.C
    Fd = sys.F if disturbance is None else np.asarray(disturbance, dtype=float)
    q = Fd.shape[1]
    I = np.eye(n)
    g2, e1, e2 = spec.gamma ** 2, spec.eps1, spec.eps2

    dAZ = dA @ Z
    blocks = {
        (0, 0): he(A @ Z - B @ M1 + dAZ),
        (0, 2): Fd,
        (0, 3): Z @ out.Cx.T,
        (0, 4): dAZ.T,
        (0, 6): B @ M1,
        (1, 1): he(Q @ (Psi @ A) - M2 @ C),
        (1, 3): out.Ce.T,
        (1, 5): Q @ Psi,
        (1, 7): I,
        (2, 2): -g2 * np.eye(q),
        (3, 3): -I,
        (4, 4): -e1 * I,
        (5, 5): -(1.0 / e1) * I,
        (6, 6): -(1.0 / e2) * Z,
        (7, 7): -e2 * Z,
    }
    blocks = {k: (v if isinstance(v, AffExpr) else AffExpr.constant(v, nv)) for k, v in blocks.items()}
    return AffineLmi.from_blocks("hinf", blocks, (n, n, q, n, n, n, n, n), nv)


def _strip_lmi(name, omega: AffExpr, X: AffExpr, a_diag, b_diag):
    """``diag(omega - 2 b X, -omega + 2 a X) < 0`` with per-area a, b."""
    n = omega.shape[0]
    Da = np.diag(a_diag)
    Db = np.diag(b_diag)
    # X is block diagonal, so D X with D constant on each block equals the
    # per-area scaling of each X_i
    blocks = {(0, 0): omega - 2.0 * (Db @ X), (1, 1): -omega + 2.0 * (Da @ X)}
    return AffineLmi.from_blocks(name, blocks, (n, n), X.lin.shape[2])


def assemble_strip_constraints(sys: CompositeSystem, spec: DesignSpec, decouplers,
                               layout: Optional[VariableLayout] = None):
    """Vertical-strip LMIs for the control loop and for the observers.

    Returns
    -------
    (AffineLmi, AffineLmi)
        Control-strip LMI on ``He(A Z - B M1 + dA Z)`` and ``Z``; observer
        strip LMI on ``He(Q Psi A - M2 C)`` and ``Q``.
    """
    if spec.strips is None:
        raise ParameterError("design spec has no strips")
    if len(spec.strips.control) != sys.N or len(spec.strips.observer) != sys.N:
        raise ParameterError("strip spec must list one strip per area")
    layout = layout or design_layout(sys)
    Z, Q, M1, M2 = _composite_vars(sys, layout)
    Psi = sla.block_diag(*[P for _, P in decouplers])
    om11 = he(sys.A @ Z - sys.B @ M1 + sys.dA @ Z)
    om22 = he(Q @ (Psi @ sys.A) - M2 @ sys.C)
    per = lambda vals: np.repeat(vals, N_STATE)
    ctl = _strip_lmi("strip:control", om11, Z,
                     per([s.a for s in spec.strips.control]), per([s.b for s in spec.strips.control]))
    obs = _strip_lmi("strip:observer", om22, Q,
                     per([s.a for s in spec.strips.observer]), per([s.b for s in spec.strips.observer]))
    return ctl, obs


def area_gains(A_i, B_i, C_i, H, Psi, K, L1, Z=None, Q=None) -> AreaGains:
    """Complete one area's gain set from ``K``, ``L1`` and the decoupler."""
    Phi = Psi @ A_i - L1 @ C_i
    G = Psi @ B_i
    L2 = Phi @ H
    return AreaGains(K, H, Psi, Phi, G, L1, L2, L1 + L2, Z, Q)


def recover_gains(sol: LmiSolution, sys: CompositeSystem, decouplers,
                  layout: Optional[VariableLayout] = None) -> List[AreaGains]:
    """Per-area gains ``K_i = M1_i Z_i^-1``, ``L1_i = Q_i^-1 M2_i`` and the
    observer matrices that follow from them."""
    layout = layout or design_layout(sys)
    out = []
    for i in range(sys.N):
        Z = sol.value(layout, f"Z{i + 1}")
        Q = sol.value(layout, f"Q{i + 1}")
        M1 = sol.value(layout, f"M1_{i + 1}")
        M2 = sol.value(layout, f"M2_{i + 1}")
        try:
            K = numlin.solve_linear(Z, M1.T).T  # Z symmetric
            L1 = numlin.solve_linear(Q, M2)
        except numlin.SingularMatrixError as exc:
            raise CertificateError(f"area {i + 1}: Z or Q is singular: {exc}") from exc
        H, Psi = decouplers[i]
        out.append(area_gains(sys.area_A(i), sys.area_B(i), sys.area_C(i), H, Psi, K, L1, Z, Q))
    return out


def build_design_problem(sys: CompositeSystem, out: OutputSelection, spec: DesignSpec,
                         pd_floor=1e-6, disturbance=None):
    """Decouplers, layout and assembled problem for a (realized) system."""
    dec = decouplers_for(sys)
    layout = design_layout(sys)
    lmis = [assemble_design_lmi(sys, out, spec, dec, layout, disturbance)]
    if spec.strips is not None:
        lmis.extend(assemble_strip_constraints(sys, spec, dec, layout))
    return dec, layout, FeasibilityProblem(layout, lmis, pd_floor)


def design_integrated(sys: CompositeSystem, out: OutputSelection, spec: DesignSpec,
                      opts: Optional[SolverOptions] = None):
    """Joint design of every area's observer and controller.

    The LMIs are posed on :func:`lfcsynth.model.design_realization` of
    ``sys`` with ``spec.tie_mode_rate``; the resulting observers are exact
    for the physical plant on every trajectory that starts at rest.

    Returns
    -------
    gains : GainSet
    solution : LmiSolution

    Raises
    ------
    InfeasibleDesign
        If no strictly feasible point is found.
    """
    opts = opts or SolverOptions()
    real = design_realization(sys, spec.tie_mode_rate) if spec.tie_mode_rate else sys
    floor = opts.pd_floor if opts.pd_floor is not None else 1e-6
    dec, layout, prob = build_design_problem(real, out, spec, floor)
    sol = solve_feasibility(prob, opts)
    if not sol.feasible:
        raise InfeasibleDesign(
            f"infeasible at margin {sol.scaled_margin:.6g} (blocking: {sol.blocking})", sol)
    gains = GainSet(recover_gains(sol, real, dec, layout), "integrated", spec,
                    {"tie_mode_rate": real.tie_mode_rate})
    return gains, sol


def interaction_channel():
    """Disturbance direction of the tie-line interaction in one area."""
    E = np.zeros((N_STATE, 1))
    E[IDX_TIE, 0] = 1.0
    return E


def design_separated(sys: CompositeSystem, out: OutputSelection, spec: DesignSpec,
                     opts: Optional[SolverOptions] = None):
    """Area-by-area baseline design.

    Each area is designed alone (interaction matrix dropped) with the
    disturbance input widened to ``[F_i, E_i]``, where ``E_i`` feeds the
    tie-line state; strips, if any, apply per area.

    Returns
    -------
    gains : GainSet
    solutions : list of LmiSolution
    """
    opts = opts or SolverOptions()
    floor = opts.pd_floor if opts.pd_floor is not None else 1e-6
    areas, sols = [], []
    for i in range(sys.N):
        local = sys.area_system(i)
        Cx, Ce = out.area_blocks(i)
        local_out = OutputSelection(Cx, Ce)
        local_strips = None
        if spec.strips is not None:
            local_strips = StripSpec((spec.strips.control[i],), (spec.strips.observer[i],))
        local_spec = replace(spec, strips=local_strips, tie_mode_rate=0.0)
        dist = np.hstack([local.F, interaction_channel()])
        dec, layout, prob = build_design_problem(local, local_out, local_spec, floor, dist)
        sol = solve_feasibility(prob, opts)
        sols.append(sol)
        if not sol.feasible:
            raise InfeasibleDesign(
                f"area {i + 1} infeasible at margin {sol.scaled_margin:.6g} "
                f"(blocking: {sol.blocking})", sols)
        areas.extend(recover_gains(sol, local, dec, layout))
    return GainSet(areas, "separated", spec, {"tie_mode_rate": 0.0}), sols
