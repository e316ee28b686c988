"""Feedback gain for the residual reconstruction error.

The gain is restricted to ``Kr = Kbar @ alpha`` where the rows of ``alpha`` span
the left null space of the leading fault Markov parameter, and ``Kbar`` is the
steady-state Kalman-type gain from a filtering Riccati equation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DesignFailed, NoStabilizingSolution, NumericFailure
from .sysmodel import psd_sqrt, spectral_radius


@dataclass
class DareSolution:
    P: np.ndarray
    Kbar: np.ndarray
    Xi: np.ndarray
    residual: float
    iterations: int
    closed_loop_radius: float

    @property
    def stable(self):
        return self.closed_loop_radius < 1.0


def _xi_inv(xi):
    if xi.size == 0:
        return xi
    try:
        c = la.cho_factor(0.5 * (xi + xi.T))
    except la.LinAlgError as exc:
        raise NumericFailure("innovation covariance lost positive definiteness") from exc
    return la.cho_solve(c, np.eye(xi.shape[0]))


def riccati_step(P, phi, q, c, r, s):
    """One filtering Riccati update; returns ``(P_next, gain, Xi)``."""
    xi = c @ P @ c.T + r
    cross = phi @ P @ c.T + s
    gain = cross @ _xi_inv(xi)
    P_next = phi @ P @ phi.T + q - gain @ cross.T
    return 0.5 * (P_next + P_next.T), gain, xi


def are_residual(P, phi, bw, c, dw):
    """Max-abs residual of the Riccati equation evaluated at ``P``."""
    q, r, s = bw @ bw.T, dw @ dw.T, bw @ dw.T
    rhs, _, _ = riccati_step(P, phi, q, c, r, s)
    return float(np.max(np.abs(P - rhs))) if P.size else 0.0


def solve_dare(phi, bw, c, dw, tol=1e-12, max_iter=100_000, debug=False) -> DareSolution:
    """Stabilizing solution of the filtering Riccati equation by fixed-point iteration.

    Solves::

        P = phi P phi' + bw bw' - (phi P c' + bw dw') Xi^-1 (phi P c' + bw dw')'
        Xi = c P c' + dw dw'

    iterating from ``P = 0`` until the largest entry change is at most
    ``tol * max(1, max|P|)``. ``c`` may have zero rows, in which case the
    recursion is a Lyapunov iteration.

    Raises:
        NoStabilizingSolution: no convergence within ``max_iter`` or the
            iterates blow up.
        NumericFailure: ``Xi`` is not positive definite.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    n = phi.shape[0]
    bw = np.asarray(bw, dtype=float).reshape(n, -1)
    c = np.asarray(c, dtype=float).reshape(-1, n)
    dw = np.asarray(dw, dtype=float).reshape(c.shape[0], bw.shape[1])
    q, r, s = bw @ bw.T, dw @ dw.T, bw @ dw.T
    _xi_inv(r)
    P = np.zeros((n, n))
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            P_next, gain, xi = riccati_step(P, phi, q, c, r, s)
        if not np.all(np.isfinite(P_next)):
            raise NoStabilizingSolution(f"Riccati iterates diverged after {it} steps")
        delta = float(np.max(np.abs(P_next - P))) if n else 0.0
        if debug and n and np.linalg.eigvalsh(P_next - P).min() < -1e-9 * max(1.0, np.abs(P_next).max()):
            raise NumericFailure(f"Riccati iterates decreased at step {it}")
        P = P_next
        if delta <= tol * max(1.0, float(np.max(np.abs(P))) if n else 1.0):
            break
    else:
        raise NoStabilizingSolution(f"Riccati iteration did not converge in {max_iter} steps")
    xi = c @ P @ c.T + r
    gain = (phi @ P @ c.T + s) @ _xi_inv(xi)
    return DareSolution(P=P, Kbar=gain, Xi=xi, residual=are_residual(P, phi, bw, c, dw),
                        iterations=it, closed_loop_radius=spectral_radius(phi - gain @ c))


def select_alpha(Htauf):
    """Orthonormal basis (as rows) of the left null space of ``Htauf``."""
    H = np.atleast_2d(Htauf)
    U, sv, _ = np.linalg.svd(H, full_matrices=True)
    rank = int(np.sum(sv > max(H.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)))
    alpha = U[:, rank:].T
    if alpha.shape[0] == 0:
        warnings.warn("leading fault Markov parameter is square and invertible; "
                      "no residual direction is left and the gain is zero", stacklevel=2)
    return alpha


@dataclass
class GainDesign:
    alpha: np.ndarray
    P: np.ndarray
    Kbar: np.ndarray
    Kr: np.ndarray
    XiE: np.ndarray
    are_residual: float
    closed_loop_radius: float
    iterations: int
    h2_norm: float = float("nan")

    def diagnostics(self):
        rel = self.are_residual / max(1.0, float(np.max(np.abs(self.P), initial=0.0)))
        return {"are_residual": self.are_residual, "are_residual_relative": rel,
                "closed_loop_radius": self.closed_loop_radius,
                "iterations": self.iterations, "h2_norm": self.h2_norm, "s": int(self.alpha.shape[0])}


def _noise_factors(real, SigmaE, alpha):
    se_half = psd_sqrt(SigmaE)
    return real.B1 @ se_half, alpha @ real.C2, alpha @ real.D2 @ se_half


def compute_gain(real, SigmaE, alpha, P):
    """``Kr = Kbar @ alpha`` with ``Kbar`` from the Riccati solution ``P``.

    Raises:
        DesignFailed: the filter closed loop is not strictly stable.
    """
    n = real.Phi1.shape[0]
    if alpha.shape[0] == 0:
        return np.zeros((n, real.C2.shape[0]))
    cbar, dbar = alpha @ real.C2, alpha @ real.D2
    xi = cbar @ P @ cbar.T + dbar @ SigmaE @ dbar.T
    kbar = (real.Phi1 @ P @ cbar.T + real.B1 @ SigmaE @ dbar.T) @ _xi_inv(xi)
    Kr = kbar @ alpha
    cl = real.Phi1 - Kr @ real.C2
    rho = spectral_radius(cl)
    if not rho < 1:
        raise DesignFailed(f"gain leaves the filter unstable (spectral radius {rho:.6g})",
                           spectrum=np.linalg.eigvals(cl))
    return Kr


def h2_norm(real, Kr, SigmaE):
    """H2 norm of the map from innovations to fault-estimate error (strictly proper part)."""
    cl = real.Phi1 - Kr @ real.C2
    if spectral_radius(cl) >= 1:
        return float("inf")
    bn = (real.B1 + Kr @ real.D2) @ psd_sqrt(SigmaE)
    W = la.solve_discrete_lyapunov(cl, bn @ bn.T)
    return float(np.sqrt(max(np.trace(real.C1 @ W @ real.C1.T), 0.0)))


DETECT_TOL = 1e-8


def _pbh_margin(phi, c, unstable_tol=1e-9):
    """Smallest scaled PBH singular value over modes with ``|lambda| >= 1``."""
    n = phi.shape[0]
    scale = max(1.0, float(np.linalg.norm(np.vstack([phi, c]), 2)))
    worst, where = float("inf"), None
    for lam in np.linalg.eigvals(phi):
        if abs(lam) >= 1 - unstable_tol:
            v = np.linalg.svd(np.vstack([phi - lam * np.eye(n), c]), compute_uv=False)[-1] / scale
            if v < worst:
                worst, where = float(v), lam
    return worst, where


def design_gain(real, SigmaE, tol=1e-12, max_iter=100_000) -> GainDesign:
    """Full gain design: alpha, Riccati solution, Kr and diagnostics.

    Raises:
        NoStabilizingSolution: an unstable mode of ``Phi1`` is undetectable
            through ``alpha @ C2`` or the Riccati iteration fails.
        DesignFailed: the resulting closed loop is not stable.
    """
    SigmaE = np.atleast_2d(SigmaE)
    alpha = select_alpha(real.Htauf)
    n, ny = real.Phi1.shape[0], real.C2.shape[0]
    if alpha.shape[0] == 0:
        Kr = np.zeros((n, ny))
        return GainDesign(alpha=alpha, P=np.zeros((n, n)), Kbar=np.zeros((n, 0)), Kr=Kr,
                          XiE=np.zeros((0, 0)), are_residual=0.0,
                          closed_loop_radius=spectral_radius(real.Phi1), iterations=0,
                          h2_norm=h2_norm(real, Kr, SigmaE))
    bw, cbar, dw = _noise_factors(real, SigmaE, alpha)
    margin, lam = _pbh_margin(real.Phi1, cbar)
    if margin < DETECT_TOL:
        raise NoStabilizingSolution(f"mode {lam:.6g} of Phi1 is unstable and invisible in the residual "
                                    f"(PBH margin {margin:.3g})")
    sol = solve_dare(real.Phi1, bw, cbar, dw, tol=tol, max_iter=max_iter)
    Kr = compute_gain(real, SigmaE, alpha, sol.P)
    return GainDesign(alpha=alpha, P=sol.P, Kbar=sol.Kbar, Kr=Kr, XiE=sol.Xi,
                      are_residual=sol.residual,
                      closed_loop_radius=spectral_radius(real.Phi1 - Kr @ real.C2),
                      iterations=sol.iterations, h2_norm=h2_norm(real, Kr, SigmaE))


@dataclass
class ExistenceReport:
    """Margins for the two conditions under which the Riccati equation has a
    stabilizing solution. A margin near zero means the condition fails."""

    detectability_margin: float
    controllability_margin: float
    pbh: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"detectability_margin": self.detectability_margin,
                "controllability_margin": self.controllability_margin,
                "pbh": [{"eig_real": float(np.real(lam)), "eig_imag": float(np.imag(lam)),
                         "sigma_min": float(sv)} for lam, sv in self.pbh],
                "notes": list(self.notes)}


def check_existence(real, SigmaE, alpha, n_grid=720, unstable_tol=1e-9) -> ExistenceReport:
    """PBH detectability of ``(Phi1, C2)`` on ``|lambda| >= 1`` and controllability
    on the unit circle of the noise-decorrelated pair ``(Fs, Qs^1/2)``."""
    SigmaE = np.atleast_2d(SigmaE)
    phi, c2 = real.Phi1, real.C2
    n = phi.shape[0]
    eye = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(np.vstack([phi, c2]), 2)))
    eigs = np.linalg.eigvals(phi)
    pbh = []
    notes = []
    for lam in eigs:
        if abs(lam) >= 1 - unstable_tol:
            m = np.vstack([phi - lam * eye, c2])
            pbh.append((lam, np.linalg.svd(m, compute_uv=False)[-1] / scale))
    if pbh:
        det_margin = float(min(v for _, v in pbh))
    else:
        det_margin = float("inf")
        notes.append("Phi1 is already stable; detectability holds vacuously")

    se_half = psd_sqrt(SigmaE)
    if alpha.shape[0]:
        cbar, dbar = alpha @ c2, alpha @ real.D2
        proj = real.B1 @ SigmaE @ dbar.T @ np.linalg.inv(dbar @ SigmaE @ dbar.T)
        Fs = phi - proj @ cbar
        Qs = real.B1 @ se_half - proj @ dbar @ se_half
    else:
        Fs = phi
        Qs = real.B1 @ se_half
        notes.append("no residual direction (s = 0); gain is zero")
    omegas = np.concatenate([np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False),
                             np.angle(np.linalg.eigvals(Fs)) % (2 * np.pi),
                             np.angle(eigs[np.abs(np.abs(eigs) - 1) < 0.05]) % (2 * np.pi)])
    cscale = max(1.0, float(np.linalg.norm(np.hstack([Fs, Qs]), 2)))
    ctrl = min(np.linalg.svd(np.hstack([Fs - np.exp(1j * w) * eye, Qs]), compute_uv=False)[-1]
               for w in omegas) / cscale
    return ExistenceReport(detectability_margin=det_margin, controllability_margin=float(ctrl),
                           pbh=pbh, notes=notes)
