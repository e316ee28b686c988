"""State-space realization of the fault estimation filter from its Markov
parameters by block-Hankel SVD.

``R`` and ``Q`` share the controllability factor of the ``R`` Hankel matrix;
``J`` shares the observability factor of ``Q``. The resulting filter input is
the stacked window ``z = [u(k-tau..k); y(k-tau..k)]`` of width
``w = (tau + 1) (n_u + n_y)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _jsonio
from .errors import DimensionError, RealizationDegenerate
from .markov import (MarkovSequence, _seq, fault_matrices, fault_signature, ss_markov)
from .sysmodel import PredictorModel


def build_hankel(W, l, m):
    """Block Hankel matrix with block ``(i, j) = W[i + j + 1]`` (``W[0]`` unused)."""
    W = _seq(W)
    if len(W) < l + m:
        raise DimensionError(f"Hankel {l}x{m} needs {l + m} Markov parameters, got {len(W)}")
    r, c = W.rows, W.cols
    H = np.empty((l * r, m * c))
    for i in range(l):
        for j in range(m):
            H[i * r:(i + 1) * r, j * c:(j + 1) * c] = W[i + j + 1]
    return H


@dataclass
class HankelFactorization:
    U: np.ndarray
    s: np.ndarray  # full singular spectrum, descending
    Vt: np.ndarray
    order: int

    @property
    def Ctrb(self):
        return np.sqrt(self.s[:self.order])[:, None] * self.Vt[:self.order]

    @property
    def Obsv(self):
        return self.U[:, :self.order] * np.sqrt(self.s[:self.order])

    @property
    def reduced(self):
        n = self.order
        return (self.U[:, :n] * self.s[:n]) @ self.Vt[:n]

    @property
    def retained_energy(self):
        tot = float(np.sum(self.s ** 2))
        return float(np.sum(self.s[:self.order] ** 2)) / tot if tot > 0 else 1.0

    @property
    def discarded(self):
        return float(self.s[self.order]) if self.order < len(self.s) else 0.0


def truncated_svd(H, order) -> HankelFactorization:
    """Keep the ``order`` largest singular values of ``H``."""
    H = np.atleast_2d(H)
    if order < 0 or order > min(H.shape):
        raise ValueError(f"order {order} exceeds the rank bound {min(H.shape)}")
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    return HankelFactorization(U=U, s=s, Vt=Vt, order=order)


@dataclass
class OrderSuggestion:
    order: int
    ratios: np.ndarray
    confident: bool
    spectrum: np.ndarray


def suggest_order(sv, window=None, min_ratio=10.0) -> OrderSuggestion:
    """Order at the largest gap ``s[i-1] / s[i]`` of a singular spectrum.

    ``window = (lo, hi)`` restricts candidate orders to ``lo..hi``. The
    suggestion is flagged low-confidence when the best gap is below
    ``min_ratio``.
    """
    sv = np.asarray(sv, dtype=float)
    if sv.size < 2:
        raise ValueError("need at least two singular values")
    floor = np.finfo(float).eps * max(sv[0], np.finfo(float).tiny)
    s = np.maximum(sv, floor)
    ratios = s[:-1] / s[1:]
    lo, hi = window if window is not None else (1, len(ratios))
    cand = np.arange(max(lo, 1), min(hi, len(ratios)) + 1)
    best = int(cand[np.argmax(ratios[cand - 1])])
    return OrderSuggestion(order=best, ratios=ratios, confident=bool(ratios[best - 1] >= min_ratio),
                           spectrum=sv)


def _shift_solve(ctrb, w):
    """Least-squares ``Phi`` with ``Phi [c_0 .. c_{m-2}] = [c_1 .. c_{m-1}]``."""
    c1, c2 = ctrb[:, :-w], ctrb[:, w:]
    gram = c1 @ c1.T
    if gram.size == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(gram)) or np.max(np.abs(gram)) == 0:
        raise RealizationDegenerate("shifted controllability Gram matrix", float("inf"))
    cond = np.linalg.cond(gram)
    if not cond <= 1e12:
        gram = gram + 1e-12 * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    return np.linalg.solve(gram, c1 @ c2.T).T


@dataclass
class FefRealization:
    """Matrices of the fault estimation filter::

        fhat(k)      = C1 x(k) + DG1 z(k+tau)
        rtilde(k+tau) = -C2 x(k) + DG2 z(k+tau)
        x(k+1)       = Phi1 x(k) + Bz z(k+tau) + Kr rtilde(k+tau)

    ``DG1 = [D_f1, G_f1]`` and ``DG2 = [-D_f2, G_f2]``; ``B1``, ``D2`` describe
    the innovation path and feed the gain design.
    """

    Phi1: np.ndarray
    Bz: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    B1: np.ndarray
    D2: np.ndarray
    DG1: np.ndarray
    DG2: np.ndarray
    tau: int
    Pi: np.ndarray
    Htauf: np.ndarray
    nu: int
    ny: int
    meta: dict = field(default_factory=dict)

    @property
    def order(self):
        return self.Phi1.shape[0]

    @property
    def nf(self):
        return self.C1.shape[0]

    @property
    def D1(self):
        return self.Pi

    @property
    def width(self):
        return (self.tau + 1) * (self.nu + self.ny)

    def markov(self, length):
        """Realized ``(R, Q, J)`` Markov parameters."""
        R = ss_markov(self.Phi1, self.Bz, self.C1, self.DG1, length)
        Q = ss_markov(self.Phi1, self.Bz, -self.C2, self.DG2, length)
        J = ss_markov(self.Phi1, self.B1, -self.C2, self.D2, length)
        return R, Q, J

    def pi_residuals(self):
        """``max|Pi C2|`` and ``max|Pi D2|``; both vanish by construction."""
        return (float(np.max(np.abs(self.Pi @ self.C2), initial=0.0)),
                float(np.max(np.abs(self.Pi @ self.D2), initial=0.0)))

    _MATS = ("Phi1", "Bz", "C1", "C2", "B1", "D2", "DG1", "DG2", "Pi", "Htauf")

    def to_dict(self):
        d = {k: _jsonio.mat_to_json(getattr(self, k)) for k in self._MATS}
        d.update(tau=self.tau, nu=self.nu, ny=self.ny, order=self.order, meta=self.meta)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: _jsonio.mat_from_json(d[k]) for k in cls._MATS}
        # a zero-order filter serializes its state matrices as empty arrays
        n = d.get("order", kw["Phi1"].shape[0])
        kw["Phi1"] = kw["Phi1"].reshape(n, n)
        kw["Bz"] = kw["Bz"].reshape(n, -1) if n else np.zeros((0, (d["tau"] + 1) * (d["nu"] + d["ny"])))
        kw["C1"] = kw["C1"].reshape(-1, n) if n else np.zeros((kw["Pi"].shape[0], 0))
        kw["C2"] = kw["C2"].reshape(-1, n) if n else np.zeros((d["ny"], 0))
        kw["B1"] = kw["B1"].reshape(n, -1) if n else np.zeros((0, d["ny"]))
        return cls(tau=d["tau"], nu=d["nu"], ny=d["ny"], meta=d.get("meta", {}), **kw)


def _project(Hq, order):
    cap = min(order, min(Hq.shape))
    return truncated_svd(Hq, cap).reduced


def realize_pipeline(R, Q, J, l, m, order, tau, Pi, Htauf, nu, ny, meta=None) -> FefRealization:
    """Realize the filter from ``{R_i}``, ``{Q_i}`` and ``{J_i}``.

    Args:
        R, Q, J: filter Markov parameters, at least ``l + m`` of each.
        l, m: block rows / columns of the Hankel matrices.
        order: filter state order (always explicit; see :func:`suggest_order`).
        tau, Pi, Htauf: relative degree, left inverse and leading fault block.
        nu, ny: input/output dimensions.
    """
    R, Q, J = _seq(R), _seq(Q), _seq(J)
    nf, w = R.rows, R.cols
    if w != (tau + 1) * (nu + ny):
        raise DimensionError(f"R blocks have {w} columns, expected {(tau + 1) * (nu + ny)}")
    if order > min(l * nf, m * w):
        raise ValueError(f"order {order} exceeds min(l*nf, m*w) = {min(l * nf, m * w)}")
    fac_r = truncated_svd(build_hankel(R, l, m), order)
    ctrb, obsv = fac_r.Ctrb, fac_r.Obsv
    Bz = ctrb[:, :w]
    C1 = obsv[:nf]
    Phi1 = _shift_solve(ctrb, w) if order else np.zeros((0, 0))

    Hq = _project(build_hankel(Q, l, m), order)
    if order:
        # ctrb ctrb' = diag(s), so the observability factor of Q is Hq V S^-1/2
        sr = fac_r.s[:order]
        if sr[0] == 0:
            raise RealizationDegenerate("Hankel matrix of R", float("inf"))
        # states beyond the numerical rank of H_R carry nothing; give them zero weight
        live = sr > max(fac_r.U.shape[0], fac_r.Vt.shape[1]) * np.finfo(float).eps * sr[0]
        inv_sqrt = np.where(live, 1.0 / np.sqrt(np.where(live, sr, 1.0)), 0.0)
        obsv_q = Hq @ fac_r.Vt[:order].T * inv_sqrt
    else:
        obsv_q = np.zeros((l * ny, 0))
    # Pi annihilates every Q block in exact arithmetic; the S^-1/2 weighting
    # magnifies rounding in that direction, so project it out of each block row
    Pi2, H2 = np.atleast_2d(Pi), np.atleast_2d(Htauf)
    proj = np.eye(ny) - H2 @ Pi2
    obsv_q = np.einsum("ij,bjk->bik", proj, obsv_q.reshape(l, ny, -1)).reshape(l * ny, -1)
    C2 = -obsv_q[:ny]

    Hj = _project(build_hankel(J, l, m), order)
    scale_j = float(np.max(np.abs(Hj), initial=0.0))
    jfit = 0.0
    if scale_j <= 1e-14 * max(1.0, float(np.max(np.abs(J.blocks)))):
        B1 = np.zeros((order, ny))
    else:
        if order == 0 or not np.any(obsv_q):
            raise RealizationDegenerate("observability factor of Q", float("inf"))
        ctrb_j = np.linalg.lstsq(obsv_q, Hj, rcond=1e-12)[0]
        miss = float(np.linalg.norm(obsv_q @ ctrb_j - Hj)) / float(np.linalg.norm(Hj))
        if miss > 0.5:
            warnings.warn(f"J Hankel matrix is poorly reproduced by the Q observability factor "
                          f"(relative misfit {miss:.3g})", stacklevel=2)
        B1 = ctrb_j[:, :ny]
        jfit = miss
    mats = (Phi1, Bz, C1, C2, B1)
    if not all(np.all(np.isfinite(a)) for a in mats):
        raise RealizationDegenerate("realization", float("inf"))
    info = {"l": l, "m": m, "order": order, "hankel_R_singular_values": [float(v) for v in fac_r.s],
            "retained_energy": fac_r.retained_energy, "J_misfit": jfit}
    info.update(meta or {})
    return FefRealization(Phi1=Phi1, Bz=Bz, C1=C1, C2=C2, B1=B1, D2=J[0].copy(),
                          DG1=R[0].copy(), DG2=Q[0].copy(), tau=tau, Pi=np.atleast_2d(Pi),
                          Htauf=np.atleast_2d(Htauf), nu=nu, ny=ny, meta=info)


def realize_from_markov(fm, l, m, order, nu, ny, meta=None) -> FefRealization:
    """Convenience wrapper taking a :class:`~fefkit.markov.FefMarkov` bundle."""
    return realize_pipeline(fm.R, fm.Q, fm.J, l, m, order, fm.tau, fm.Pi, fm.signature.Htauf,
                            nu, ny, meta=meta)


def fef_from_predictor(pred: PredictorModel, Etilde=None, G=None, faults=None, Pi=None,
                       tol=1e-10) -> FefRealization:
    """Filter matrices computed directly from a known predictor model.

    Faults are given either as ``(Etilde, G)`` or as a list of
    :class:`~fefkit.markov.FaultChannel`.
    """
    if faults is not None:
        Etilde, G = fault_matrices(pred.Btilde, pred.K, pred.D, faults)
    Etilde, G = np.atleast_2d(Etilde), np.atleast_2d(G)
    Phi, C, K, Bt, D = pred.Phi, pred.C, pred.K, pred.Btilde, pred.D
    n, ny, nu = pred.n, pred.ny, pred.nu
    L = n + 2
    Hf = ss_markov(Phi, Etilde, C, G, L)
    sig = fault_signature(Hf, tol=tol, Pi=Pi)
    tau, Pi, H = sig.tau, sig.Pi, sig.Htauf
    Hu = ss_markov(Phi, Bt, C, D, tau + 1)
    Hy = ss_markov(Phi, K, C, np.zeros((ny, ny)), tau + 1)
    cphi = C @ np.linalg.matrix_power(Phi, tau)
    Phi1 = Phi - Etilde @ Pi @ cphi
    B1 = Etilde @ Pi
    C1 = -Pi @ cphi
    D2 = np.eye(ny) - H @ Pi
    C2 = D2 @ cphi
    Bu = np.hstack([Hu[tau - j] for j in range(tau + 1)])
    By = np.hstack([-Hy[tau - j] for j in range(tau)] + [np.eye(ny)])
    Bt_tau = np.hstack([Bt, np.zeros((n, tau * nu))])
    K_tau = np.hstack([K, np.zeros((n, tau * ny))])
    Bf = Bt_tau - B1 @ Bu
    Kf = K_tau + B1 @ By
    DG1 = np.hstack([-Pi @ Bu, Pi @ By])
    DG2 = np.hstack([-(D2 @ Bu), D2 @ By])
    return FefRealization(Phi1=Phi1, Bz=np.hstack([Bf, Kf]), C1=C1, C2=C2, B1=B1, D2=D2,
                          DG1=DG1, DG2=DG2, tau=tau, Pi=Pi, Htauf=H, nu=nu, ny=ny,
                          meta={"source": "model"})


def ho_kalman(Hu, Hy, order, l, m, SigmaE=None) -> PredictorModel:
    """Predictor model realized from ``[Hu_i, Hy_i]`` by the same Hankel SVD.

    Fault matrices are left empty; attach them with
    :func:`~fefkit.markov.fault_matrices`.
    """
    Hu, Hy = _seq(Hu), _seq(Hy)
    L = max(len(Hu), len(Hy), l + m)
    Hu, Hy = Hu.extended(L), Hy.extended(L)
    ny, nu = Hu.rows, Hu.cols
    W = MarkovSequence(np.concatenate([Hu.blocks, Hy.blocks], axis=2))
    fac = truncated_svd(build_hankel(W, l, m), order)
    ctrb, obsv = fac.Ctrb, fac.Obsv
    Phi = _shift_solve(ctrb, nu + ny)
    C = obsv[:ny]
    Bt, K = ctrb[:, :nu], ctrb[:, nu:nu + ny]
    SigmaE = np.eye(ny) if SigmaE is None else np.atleast_2d(SigmaE)
    return PredictorModel(Phi=Phi, Btilde=Bt, Etilde=np.zeros((order, 0)), K=K, C=C,
                          D=Hu[0].copy(), G=np.zeros((ny, 0)), SigmaE=SigmaE)
