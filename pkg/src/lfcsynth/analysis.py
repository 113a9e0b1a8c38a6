"""Closed-loop verification of a designed gain set.

The closed loop is written in plant-state / estimation-error coordinates
``[x; e]`` with ``e = x - x_hat``:

    Acl = [[A + dA - B K,              B K],
           [Psi (A + dA) - Psi A_obs,  Phi]]

where ``Psi A_obs = Phi + L1 C`` is the model the observers were built on.
When that model is the plant's own block diagonal, the lower-left block
reduces to ``Psi dA``.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg as sla

from . import numlin
from .model import CompositeSystem, OutputSelection, conserved_modes, design_realization
from .synthesis import DesignSpec, GainSet, Strip, StripSpec


class UndefinedNormError(ValueError):
    """The H-infinity norm is undefined because Acl is not Hurwitz."""


@dataclass(frozen=True)
class ClosedLoopRealization:
    """``(Acl, Bcl, Ccl)`` from disturbance to performance output."""

    Acl: np.ndarray
    Bcl: np.ndarray
    Ccl: np.ndarray

    @property
    def order(self):
        return self.Acl.shape[0]


def build_closed_loop(sys: CompositeSystem, gains: GainSet, out: OutputSelection):
    """Composite closed loop of ``sys`` under the per-area observers of ``gains``.

    Returns
    -------
    ClosedLoopRealization
        Of order ``2n`` with ``Bcl = [F; Psi F]`` and ``Ccl = [Cx, Ce]``.
    """
    if gains.N != sys.N:
        raise ValueError(f"gain set has {gains.N} areas, system has {sys.N}")
    K = gains.stack("K")
    L1 = gains.stack("L1")
    Psi = gains.stack("Psi")
    Phi = gains.stack("Phi")
    if K.shape != (sys.m, sys.n) or L1.shape != (sys.n, sys.p):
        raise ValueError("gain dimensions do not match the system")
    Af = sys.A + sys.dA
    BK = sys.B @ K
    psi_a_obs = Phi + L1 @ sys.C
    Acl = np.block([[Af - BK, BK], [Psi @ Af - psi_a_obs, Phi]])
    Bcl = np.vstack([sys.F, Psi @ sys.F])
    Ccl = np.hstack([out.Cx, out.Ce])
    return ClosedLoopRealization(Acl, Bcl, Ccl)


def restrict_to_invariant(r: ClosedLoopRealization, sys: CompositeSystem, tol=1e-9):
    """Remove the conserved modes of ``sys`` from a closed loop.

    For every left null vector ``w`` of ``[A + dA, B]`` with ``w^T F = 0``,
    ``[w; 0]`` is a left null vector of ``Acl`` and of ``Bcl``, so the
    orthogonal complement is invariant and contains every trajectory that
    starts at rest. The realization is projected onto that complement.

    Returns
    -------
    (ClosedLoopRealization, int)
        Restricted realization and the number of modes removed.
    """
    W = conserved_modes(sys)
    if W.shape[1] == 0:
        return r, 0
    V = np.vstack([W, np.zeros_like(W)])
    scale = max(np.max(np.abs(r.Acl)), 1.0)
    if np.max(np.abs(V.T @ r.Acl)) > tol * scale or np.max(np.abs(V.T @ r.Bcl), initial=0) > tol:
        raise ValueError("conserved directions are not invariant under this closed loop")
    U = sla.null_space(V.T)
    return ClosedLoopRealization(U.T @ r.Acl @ U, U.T @ r.Bcl, r.Ccl @ U), W.shape[1]


def _freq_response_sigma(r, w):
    n = r.order
    X = numlin.solve_linear(1j * w * np.eye(n) - r.Acl, r.Bcl.astype(complex))
    return numlin.sigma_max(r.Ccl @ X)


def hinf_norm(r: ClosedLoopRealization, grid=None, refine=True, return_freq=False):
    """Grid-based lower bound on the H-infinity norm.

    Parameters
    ----------
    r : ClosedLoopRealization
    grid : array_like, optional
        Frequencies in rad/s. Defaults to 2000 log-spaced points over
        ``[1e-3, 1e3]`` plus ``w = 0``.
    refine : bool
        Golden-section search around the best grid point.
    return_freq : bool
        Also return the maximizing frequency.

    Raises
    ------
    UndefinedNormError
        If ``Acl`` has an eigenvalue with non-negative real part.
    """
    spec = numlin.eig(r.Acl)
    tol = 1e-12 * max(np.max(np.abs(r.Acl), initial=0.0), 1.0)
    if spec.size and np.max(spec.real) >= -tol:
        raise UndefinedNormError(f"Acl is not Hurwitz (max Re = {np.max(spec.real):.3g})")
    if not np.any(r.Bcl) or not np.any(r.Ccl):
        return (0.0, 0.0) if return_freq else 0.0
    if grid is None:
        grid = np.concatenate([[0.0], np.logspace(-3, 3, 2000)])
    grid = np.asarray(grid, dtype=float)
    vals = np.array([_freq_response_sigma(r, w) for w in grid])
    k = int(np.argmax(vals))
    best_w, best = grid[k], vals[k]
    if refine and grid.size > 2:
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.size - 1)]
        f = lambda w: -_freq_response_sigma(r, w)
        gr = (np.sqrt(5) - 1) / 2
        a, b = lo, hi
        c, d = b - gr * (b - a), a + gr * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(60):
            if b - a <= 1e-10 * max(1.0, abs(b)):
                break
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - gr * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + gr * (b - a)
                fd = f(d)
        for w, v in ((c, -fc), (d, -fd)):
            if v > best:
                best_w, best = w, v
    return (float(best), float(best_w)) if return_freq else float(best)


def control_matrix(sys, gains, include_interaction=True):
    M = sys.A - sys.B @ gains.stack("K")
    return M + sys.dA if include_interaction else M


def control_spectrum(sys, gains):
    """Spectrum of ``A - B K + dA`` with conserved modes of ``sys`` removed.

    Returns
    -------
    (ndarray, int)
        Eigenvalues and the number of zero modes removed.
    """
    M = control_matrix(sys, gains)
    W = conserved_modes(sys)
    if W.shape[1] == 0:
        return numlin.eig(M), 0
    U = sla.null_space(W.T)
    return numlin.eig(U.T @ M @ U), W.shape[1]


def check_strips(sys: CompositeSystem, gains: GainSet, strips: StripSpec, slack=1e-6):
    """Strip membership of the control-loop and observer spectra.

    The control strip is checked on the composite ``A - B K + dA`` (with
    any conserved zero modes of ``sys`` removed) against the widest
    per-area strip; each observer ``Phi_i`` is checked against its own strip.

    Returns
    -------
    dict
        ``control`` and ``observer`` entries with the eigenvalues, a
        membership mask and a pass flag, plus ``passed``.
    """
    ctl_strip = strips.composite_control()
    ev_c, removed = control_spectrum(sys, gains)
    in_c = ctl_strip.contains(ev_c.real, slack)
    ev_o, in_o, labels = [], [], []
    for i, (g, s) in enumerate(zip(gains.areas, strips.observer)):
        ev = numlin.eig(g.Phi)
        ev_o.append(ev)
        in_o.append(s.contains(ev.real, slack))
        labels += [f"observer{i + 1}"] * ev.size
    ev_o = np.concatenate(ev_o)
    in_o = np.concatenate(in_o)
    return {
        "control": {"strip": [ctl_strip.a, ctl_strip.b], "eigenvalues": ev_c,
                    "conserved_removed": removed,
                    "inside": in_c, "passed": bool(np.all(in_c))},
        "observer": {"strips": [[s.a, s.b] for s in strips.observer], "eigenvalues": ev_o,
                     "inside": in_o, "labels": labels, "passed": bool(np.all(in_o))},
        "passed": bool(np.all(in_c) and np.all(in_o)),
    }


def analysis_matrix(sys: CompositeSystem, out: OutputSelection, gains: GainSet, Z, Q,
                    spec: DesignSpec, disturbance=None):
    """Quadratic-Lyapunov H-infinity matrix in ``P = Z^-1`` and ``Q``.

    Blocks over ``[x, e, d, z]``::

        [[P1, P B K, P F, Cx^T],
         [ * ,  P2,  0,  Ce^T],
         [ * ,  * , -g^2 I, 0],
         [ * ,  * ,  * ,  -I]]

    with ``P1 = He(P (A - B K) + P dA) + dA^T dA / eps1`` and
    ``P2 = He(Q Phi) + eps1 Q Psi Psi^T Q``. ``disturbance`` replaces ``F``.
    """
    n = sys.n
    P = numlin.solve_linear(Z, np.eye(n))
    P = 0.5 * (P + P.T)
    K = gains.stack("K")
    Psi = gains.stack("Psi")
    Phi = gains.stack("Phi")
    A, dA, B = sys.A, sys.dA, sys.B
    F = sys.F if disturbance is None else np.asarray(disturbance, dtype=float)
    e1, g2 = spec.eps1, spec.gamma ** 2
    X11 = P @ (A - B @ K) + P @ dA
    P1 = X11 + X11.T + dA.T @ dA / e1
    X22 = Q @ Phi
    P2 = X22 + X22.T + e1 * Q @ Psi @ Psi.T @ Q
    q = F.shape[1]
    Znq = np.zeros((n, q))
    M = np.block([
        [P1, P @ B @ K, P @ F, out.Cx.T],
        [(P @ B @ K).T, P2, Znq, out.Ce.T],
        [(P @ F).T, Znq.T, -g2 * np.eye(q), np.zeros((q, n))],
        [out.Cx, out.Ce, np.zeros((n, q)), -np.eye(n)],
    ])
    return 0.5 * (M + M.T)


def analysis_lmi_residual(sys, out, gains, Z, Q, spec, disturbance=None):
    """Largest eigenvalue of :func:`analysis_matrix` (negative certifies the
    closed loop stable with H-infinity norm below ``spec.gamma``)."""
    return numlin.lambda_max_sym(analysis_matrix(sys, out, gains, Z, Q, spec, disturbance))


def separated_residual(sys, out, gains, spec):
    """Worst per-area residual of a separated design, each area checked on its
    own model with the interaction channel appended to the disturbance."""
    from .synthesis import interaction_channel
    worst = -np.inf
    for i, g in enumerate(gains.areas):
        local = sys.area_system(i)
        Cx, Ce = out.area_blocks(i)
        one = GainSet([g], gains.strategy, gains.spec)
        dist = np.hstack([local.F, interaction_channel()])
        r = analysis_lmi_residual(local, OutputSelection(Cx, Ce), one, g.Z, g.Q, spec, dist)
        worst = max(worst, r)
    return worst


@dataclass
class VerificationReport:
    """Numeric results and derived pass/fail flags of one design check."""

    gamma: float
    spectrum: np.ndarray
    spectrum_control: np.ndarray
    spectrum_control_no_interaction: np.ndarray
    spectrum_observer: np.ndarray
    physical_spectrum: np.ndarray
    conserved_modes: int
    hinf: float
    hinf_freq: float
    hinf_physical: float
    analysis_residual: Optional[float]
    decoupling_residual: float
    strips: Optional[dict] = None
    notes: List[str] = field(default_factory=list)

    @property
    def flags(self):
        f = {
            "stable": bool(self.spectrum.size and np.max(self.spectrum.real) < 0),
            "hinf_below_gamma": bool(np.isfinite(self.hinf) and self.hinf < self.gamma),
            "decoupling": bool(self.decoupling_residual <= 1e-12),
        }
        if self.analysis_residual is not None:
            f["analysis_lmi"] = bool(self.analysis_residual < 0)
        if self.strips is not None:
            f["strip_control"] = self.strips["control"]["passed"]
            f["strip_observer"] = self.strips["observer"]["passed"]
        return f

    @property
    def passed(self):
        return all(self.flags.values())

    def failing(self):
        return [k for k, v in self.flags.items() if not v]

    def eigen_rows(self):
        """``(re, im, label)`` rows for CSV export."""
        rows = []
        for label, ev in (("closed_loop", self.spectrum),
                          ("control_with_interaction", self.spectrum_control),
                          ("control_without_interaction", self.spectrum_control_no_interaction),
                          ("observer", self.spectrum_observer),
                          ("physical_closed_loop", self.physical_spectrum)):
            rows += [(float(z.real), float(z.imag), label) for z in ev]
        return rows


def decoupling_residual(sys, gains):
    """``max_i ||Psi_i F_i|| / ||F_i||``."""
    worst = 0.0
    for i, g in enumerate(gains.areas):
        F = sys.area_F(i)
        nf = numlin.sigma_max(F)
        if nf > 0:
            worst = max(worst, numlin.sigma_max(g.Psi @ F) / nf)
    return worst


def realization_for(sys: CompositeSystem, gains: GainSet):
    """The system realization the gains were designed on."""
    rate = float(gains.meta.get("tie_mode_rate", 0.0) or 0.0)
    return design_realization(sys, rate) if rate else sys


def verify_design(sys: CompositeSystem, out: OutputSelection, gains: GainSet,
                  spec: Optional[DesignSpec] = None, strips: Optional[StripSpec] = None):
    """Run every closed-loop check on a gain set.

    ``sys`` is the physical model; the checks that need a strict inequality
    (spectrum, norm, analysis LMI, strips) run on the realization recorded
    in the gain set, and the physical closed loop is reported on its
    invariant subspace.

    Parameters
    ----------
    spec : DesignSpec, optional
        Defaults to ``gains.spec``; supplies ``gamma`` and ``eps1``.
    strips : StripSpec, optional
        Strips to check against; defaults to ``spec.strips``.
    """
    spec = spec or gains.spec
    if spec is None:
        raise ValueError("a design spec is needed to verify a gain set")
    strips = strips if strips is not None else spec.strips
    real = realization_for(sys, gains)
    notes = []
    r, removed_real = restrict_to_invariant(build_closed_loop(real, gains, out), real)
    spectrum = numlin.eig(r.Acl)
    rp, removed = restrict_to_invariant(build_closed_loop(sys, gains, out), sys)
    if removed_real:
        notes.append(f"{removed_real} conserved mode(s) at s = 0 removed before the checks")
    if removed:
        notes.append(f"{removed} conserved mode(s) at s = 0 removed from the physical closed loop")
    phys = numlin.eig(rp.Acl)
    try:
        hinf, wpk = hinf_norm(r, return_freq=True)
    except UndefinedNormError:
        hinf, wpk = np.inf, np.nan
    try:
        hinf_p = hinf_norm(rp)
    except UndefinedNormError:
        hinf_p = np.inf
    resid = None
    if all(g.Z is not None and g.Q is not None for g in gains.areas):
        if gains.strategy == "separated":
            resid = separated_residual(sys, out, gains, spec)
        else:
            resid = analysis_lmi_residual(real, out, gains, gains.stack("Z"), gains.stack("Q"), spec)
    ev_o = np.concatenate([numlin.eig(g.Phi) for g in gains.areas])
    report = VerificationReport(
        gamma=spec.gamma, spectrum=spectrum,
        spectrum_control=control_spectrum(real, gains)[0],
        spectrum_control_no_interaction=numlin.eig(control_matrix(real, gains, False)),
        spectrum_observer=ev_o, physical_spectrum=phys, conserved_modes=removed,
        hinf=hinf, hinf_freq=wpk, hinf_physical=hinf_p, analysis_residual=resid,
        decoupling_residual=decoupling_residual(sys, gains),
        strips=check_strips(real, gains, strips) if strips is not None else None,
        notes=notes)
    return report
