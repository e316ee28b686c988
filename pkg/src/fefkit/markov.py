"""Markov-parameter algebra for the system-inversion fault estimation filter.

All sequences are stored as ``(L, rows, cols)`` arrays wrapped in
:class:`MarkovSequence`. Convolutions are computed directly, O(L^2) block
products, which is cheap at the window lengths used here (L <= a few hundred).

Naming used throughout:

* ``Hu, Hy, Hf``: predictor Markov parameters from input, output and fault.
* ``scrHz``: Markov parameters of the residual generator driven by the stacked
  window ``z = [u(k-tau..k); y(k-tau..k)]``.
* ``scrHf``: shifted fault parameters ``Hf[tau + i]``.
* ``G``: block-Toeplitz left inverse of ``scrHf`` (open-loop inverse).
* ``J``: residual reconstruction error map, ``J_L = I - T(scrHf) T(G)``.
* ``R, Q``: open-loop filter maps from ``z`` to the fault estimate and to the
  residual reconstruction error.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import _jsonio
from .errors import AssumptionViolated, DimensionError, ZeroFaultSubsystem


class MarkovSequence:
    """Ordered list of equally sized matrices ``H_0 .. H_{L-1}``."""

    def __init__(self, blocks):
        arr = np.asarray(blocks, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None] if arr.shape[0] else arr.reshape(0, 0, 0)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise DimensionError("a Markov sequence needs at least one 2-D block")
        self.blocks = arr

    @classmethod
    def zeros(cls, length, rows, cols):
        return cls(np.zeros((length, rows, cols)))

    def __len__(self):
        return self.blocks.shape[0]

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self):
        return f"MarkovSequence(L={len(self)}, block={self.rows}x{self.cols})"

    @property
    def rows(self):
        return self.blocks.shape[1]

    @property
    def cols(self):
        return self.blocks.shape[2]

    def get(self, i):
        """Block ``i``, or a zero block beyond the stored length."""
        if 0 <= i < len(self):
            return self.blocks[i]
        return np.zeros((self.rows, self.cols))

    def extended(self, length):
        """Copy padded with zero blocks (or truncated) to ``length``."""
        out = np.zeros((length, self.rows, self.cols))
        k = min(length, len(self))
        out[:k] = self.blocks[:k]
        return MarkovSequence(out)

    def column(self, j):
        return MarkovSequence(self.blocks[:, :, j:j + 1])

    def toeplitz(self, s=None):
        return block_toeplitz(self, s)

    def allclose(self, other, atol):
        return self.blocks.shape == other.blocks.shape and np.allclose(self.blocks, other.blocks,
                                                                       rtol=0, atol=atol)

    def to_dict(self):
        return {"length": len(self), "rows": self.rows, "cols": self.cols,
                "blocks": [_jsonio.mat_to_json(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d):
        blocks = [_jsonio.mat_from_json(b) for b in d["blocks"]]
        return cls(np.asarray(blocks).reshape(d["length"], d["rows"], d["cols"]))


def _seq(x):
    return x if isinstance(x, MarkovSequence) else MarkovSequence(x)


def block_toeplitz(seq, s=None):
    """Lower block-triangular Toeplitz matrix with ``seq[0]`` on the diagonal."""
    seq = _seq(seq)
    s = len(seq) if s is None else s
    r, c = seq.rows, seq.cols
    T = np.zeros((s * r, s * c))
    for i in range(s):
        for j in range(i + 1):
            T[i * r:(i + 1) * r, j * c:(j + 1) * c] = seq.get(i - j)
    return T


def extended_observability(A, C, s):
    """``[C; C A; ...; C A^(s-1)]``."""
    A = np.atleast_2d(A)
    C = np.atleast_2d(C)
    out = np.empty((s * C.shape[0], A.shape[0]))
    cp = C.copy()
    for i in range(s):
        out[i * C.shape[0]:(i + 1) * C.shape[0]] = cp
        cp = cp @ A
    return out


def ss_markov(A, B, C, D, length):
    """Markov parameters ``D, CB, CAB, ...`` of a state-space system."""
    A, B, C, D = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, C, D))
    out = np.zeros((length, D.shape[0], D.shape[1]))
    out[0] = D
    cp = C.copy()
    for i in range(1, length):
        out[i] = cp @ B
        cp = cp @ A
    return MarkovSequence(out)


# ---------------------------------------------------------------------------
# fault Markov parameters

@dataclass(frozen=True)
class FaultChannel:
    kind: str  # "actuator" or "sensor"
    index: int  # zero-based channel

    def __post_init__(self):
        if self.kind not in ("actuator", "sensor"):
            raise ValueError(f"unknown fault kind {self.kind!r}")

    def __str__(self):
        return f"{self.kind}:{self.index + 1}"


def parse_faults(text) -> List[FaultChannel]:
    """Parse ``"actuator:1,2"`` or ``"actuator:1;sensor:2"`` (1-based channels)."""
    out = []
    for part in str(text).split(";"):
        part = part.strip()
        if not part:
            continue
        kind, _, chans = part.partition(":")
        if not chans:
            raise ValueError(f"fault spec {part!r} has no channel list")
        for ch in chans.split(","):
            out.append(FaultChannel(kind.strip(), int(ch) - 1))
    if not out:
        raise ValueError("empty fault spec")
    return out


def format_faults(faults):
    groups = {}
    for fc in faults:
        groups.setdefault(fc.kind, []).append(str(fc.index + 1))
    return ";".join(f"{k}:{','.join(v)}" for k, v in groups.items())


def fault_mps(Hu, Hy, faults: Sequence[FaultChannel]) -> MarkovSequence:
    """Fault Markov parameters for additive actuator/sensor faults.

    Actuator fault on channel j: column j of ``Hu[i]``. Sensor fault on channel
    j: unit column at i = 0, minus column j of ``Hy[i]`` for i >= 1. Multiple
    faults are stacked column-wise in the given order.
    """
    Hu, Hy = _seq(Hu), _seq(Hy)
    L = max(len(Hu), len(Hy))
    ny, nu = Hu.rows, Hu.cols
    if isinstance(faults, FaultChannel):
        faults = [faults]
    cols = []
    for fc in faults:
        col = np.zeros((L, ny, 1))
        if fc.kind == "actuator":
            if not 0 <= fc.index < nu:
                raise IndexError(f"actuator channel {fc.index + 1} out of range (n_u={nu})")
            for i in range(L):
                col[i, :, 0] = Hu.get(i)[:, fc.index]
        else:
            if not 0 <= fc.index < ny:
                raise IndexError(f"sensor channel {fc.index + 1} out of range (n_y={ny})")
            col[0, fc.index, 0] = 1.0
            for i in range(1, L):
                col[i, :, 0] = -Hy.get(i)[:, fc.index]
        cols.append(col)
    return MarkovSequence(np.concatenate(cols, axis=2))


def fault_matrices(Btilde, K, D, faults):
    """Model-based ``(Etilde, G)`` of the predictor for the given faults."""
    Btilde, K, D = (np.atleast_2d(m) for m in (Btilde, K, D))
    ny = K.shape[1]
    E_cols, G_cols = [], []
    for fc in faults:
        if fc.kind == "actuator":
            E_cols.append(Btilde[:, fc.index])
            G_cols.append(D[:, fc.index])
        else:
            E_cols.append(-K[:, fc.index])
            G_cols.append(np.eye(ny)[:, fc.index])
    return np.column_stack(E_cols), np.column_stack(G_cols)


def _degree(norms, tol, atol):
    thr = max(tol * float(np.max(norms)), atol)
    nz = np.nonzero(norms > thr)[0]
    return int(nz[0]) if nz.size else None


def relative_degree(Hf, tol=1e-6, atol=0.0, check_rank=True) -> int:
    """Index of the first fault Markov parameter above the detection threshold.

    A block counts as nonzero when its Frobenius norm exceeds
    ``max(tol * max_j ||Hf[j]||, atol)``. The leading block must have full
    column rank (smallest singular value above ``tol`` times the largest).
    """
    Hf = _seq(Hf)
    norms = np.linalg.norm(Hf.blocks, axis=(1, 2))
    if not np.any(norms > 0):
        raise ZeroFaultSubsystem("all fault Markov parameters are zero")
    tau = _degree(norms, tol, atol)
    if tau is None:
        raise ZeroFaultSubsystem("all fault Markov parameters are below the threshold")
    if check_rank:
        sv = np.linalg.svd(Hf[tau], compute_uv=False)
        if Hf.cols > Hf.rows or sv[-1] <= tol * sv[0]:
            raise AssumptionViolated(
                f"fault Markov parameter {tau} is not full column rank "
                f"(singular values {np.array2string(sv, precision=3)})")
    return tau


def column_degrees(Hf, tol=1e-6, atol=0.0):
    Hf = _seq(Hf)
    out = []
    for j in range(Hf.cols):
        norms = np.linalg.norm(Hf.blocks[:, :, j], axis=1)
        out.append(_degree(norms, tol, atol) if np.any(norms > 0) else None)
    return out


def select_pi(Htauf):
    """Moore-Penrose left inverse ``(H'H)^-1 H'``."""
    H = np.atleast_2d(Htauf)
    sv = np.linalg.svd(H, compute_uv=False)
    if H.shape[1] > H.shape[0] or sv[-1] <= max(H.shape) * np.finfo(float).eps * sv[0]:
        raise AssumptionViolated("leading fault Markov parameter is rank deficient")
    return np.linalg.solve(H.T @ H, H.T)


@dataclass
class FaultSignature:
    Hf: MarkovSequence
    tau: int
    Pi: np.ndarray
    column_degrees: list = field(default_factory=list)

    @property
    def Htauf(self):
        return self.Hf[self.tau]


def fault_signature(Hf, tol=1e-6, atol=0.0, Pi=None) -> FaultSignature:
    Hf = _seq(Hf)
    tau = relative_degree(Hf, tol, atol)
    degs = column_degrees(Hf, tol, atol)
    if len(set(degs)) > 1:
        warnings.warn(f"fault channels have different relative degrees {degs}; "
                      f"using the smallest, tau={tau}", stacklevel=2)
    if Pi is None:
        Pi = select_pi(Hf[tau])
    else:
        Pi = np.atleast_2d(Pi)
        if not np.allclose(Pi @ Hf[tau], np.eye(Hf.cols), atol=1e-10):
            raise ValueError("Pi is not a left inverse of the leading fault Markov parameter")
    return FaultSignature(Hf=Hf, tau=tau, Pi=Pi, column_degrees=degs)


# ---------------------------------------------------------------------------
# SI-FEF Markov parameters

def build_scrH(Hu, Hy, Hf, tau, L):
    """Residual-generator parameters ``scrHz`` and shifted fault parameters ``scrHf``.

    Predictor parameters past the stored length are taken as zero.
    """
    Hu, Hy, Hf = _seq(Hu), _seq(Hy), _seq(Hf)
    ny, nu = Hu.rows, Hu.cols
    w = (tau + 1) * (nu + ny)
    Z = np.zeros((L, ny, w))
    # i = 0: [-H_tau^u .. -H_0^u, -H_tau^y .. -H_1^y, I]
    for j in range(tau + 1):
        Z[0, :, j * nu:(j + 1) * nu] = -Hu.get(tau - j)
    off = (tau + 1) * nu
    for j in range(tau):
        Z[0, :, off + j * ny:off + (j + 1) * ny] = -Hy.get(tau - j)
    Z[0, :, off + tau * ny:] = np.eye(ny)
    for i in range(1, L):
        Z[i, :, :nu] = -Hu.get(tau + i)
        Z[i, :, off:off + ny] = -Hy.get(tau + i)
    F = np.stack([Hf.get(tau + i) for i in range(L)])
    return MarkovSequence(Z), MarkovSequence(F)


def invert_toeplitz_G(scrHf, Pi, L=None):
    """Block-Toeplitz left inverse of ``T(scrHf)`` with leading block ``Pi``."""
    scrHf = _seq(scrHf)
    L = len(scrHf) if L is None else L
    Pi = np.atleast_2d(Pi)
    G = np.zeros((L, Pi.shape[0], Pi.shape[1]))
    G[0] = Pi
    for i in range(1, L):
        acc = np.zeros((Pi.shape[0], scrHf.cols))
        for j in range(1, i + 1):
            acc += G[i - j] @ scrHf.get(j)
        G[i] = -acc @ Pi
    return MarkovSequence(G)


def convolve_J(scrHf, G, L=None):
    """``J_0 = I - scrHf_0 G_0``, ``J_i = -sum_j scrHf_{i-j} G_j``."""
    scrHf, G = _seq(scrHf), _seq(G)
    L = len(G) if L is None else L
    ny = scrHf.rows
    J = np.zeros((L, ny, G.cols))
    for i in range(L):
        acc = np.zeros((ny, G.cols))
        for j in range(i + 1):
            acc += scrHf.get(i - j) @ G.get(j)
        J[i] = -acc
    J[0] += np.eye(ny)
    return MarkovSequence(J)


def _convolve(a, b, L):
    out = np.zeros((L, a.rows, b.cols))
    for i in range(L):
        for j in range(i + 1):
            out[i] += a.get(i - j) @ b.get(j)
    return MarkovSequence(out)


def convolve_RQ(G, J, scrHz, L=None):
    """``R_i = sum_j G_{i-j} scrHz_j`` and ``Q_i = sum_j J_{i-j} scrHz_j``."""
    G, J, scrHz = _seq(G), _seq(J), _seq(scrHz)
    L = len(G) if L is None else L
    return _convolve(G, scrHz, L), _convolve(J, scrHz, L)


def closed_loop_mps(Phi1, B1, C1, D1, C2, D2, Kr, L):
    """Markov parameters of the closed-loop inverse and of its feedback path.

    ``K_i = C1 (Phi1 - Kr C2)^(i-1) (B1 + Kr D2)`` with ``K_0 = D1``;
    ``M_i = C1 (Phi1 - Kr C2)^(i-1) Kr`` with ``M_0 = 0``.
    """
    Phi1, B1, C1, D1, C2, D2, Kr = (np.atleast_2d(m) for m in (Phi1, B1, C1, D1, C2, D2, Kr))
    cl = Phi1 - Kr @ C2
    K = ss_markov(cl, B1 + Kr @ D2, C1, D1, L)
    M = ss_markov(cl, Kr, C1, np.zeros((C1.shape[0], Kr.shape[1])), L)
    return K, M


@dataclass
class FefMarkov:
    """Everything the realization step needs from the Markov-parameter stage."""

    signature: FaultSignature
    scrHz: MarkovSequence
    scrHf: MarkovSequence
    G: MarkovSequence
    J: MarkovSequence
    R: MarkovSequence
    Q: MarkovSequence

    @property
    def tau(self):
        return self.signature.tau

    @property
    def Pi(self):
        return self.signature.Pi


def fef_markov(Hu, Hy, faults, L, tol=1e-6, atol=0.0, Pi=None, Hf=None) -> FefMarkov:
    """From predictor Markov parameters to ``{G, J, R, Q}`` of the filter."""
    Hf = fault_mps(Hu, Hy, faults) if Hf is None else _seq(Hf)
    sig = fault_signature(Hf, tol=tol, atol=atol, Pi=Pi)
    scrHz, scrHf = build_scrH(Hu, Hy, Hf, sig.tau, L)
    G = invert_toeplitz_G(scrHf, sig.Pi, L)
    J = convolve_J(scrHf, G, L)
    R, Q = convolve_RQ(G, J, scrHz, L)
    return FefMarkov(signature=sig, scrHz=scrHz, scrHf=scrHf, G=G, J=J, R=R, Q=Q)


# ---------------------------------------------------------------------------
# batch estimator

def stack_windows(u, y, tau):
    """Rows ``z_j = [u(j-tau) .. u(j), y(j-tau) .. y(j)]`` for ``j = tau .. N-1``."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    N = len(y)
    if N <= tau:
        return np.zeros((0, (tau + 1) * (u.shape[1] + y.shape[1])))
    us = [u[j:N - tau + j] for j in range(tau + 1)]
    ys = [y[j:N - tau + j] for j in range(tau + 1)]
    return np.hstack(us + ys)


def batch_matrix(R, Q, M):
    """``T(R) + T(M) T(Q)``, the batch map from stacked windows to estimates."""
    R, Q, M = _seq(R), _seq(Q), _seq(M)
    L = len(R)
    return block_toeplitz(R, L) + block_toeplitz(M, L) @ block_toeplitz(Q, L)


def batch_estimate(R, Q, M, zbar, x0=None, phi_cl=None, c1=None):
    """Stacked fault estimates over a window of ``L = len(R)`` samples.

    Args:
        R, Q: open-loop filter Markov parameters.
        M: feedback-path Markov parameters (from :func:`closed_loop_mps`).
        zbar: ``(L, w)`` stacked windows, oldest first (or the flattened vector).
        x0: filter state at the start of the window; needs ``phi_cl`` and ``c1``.

    Returns:
        ``(L, nf)`` array; the last row is the estimate for the newest window.
    """
    R = _seq(R)
    L, nf, w = len(R), R.rows, R.cols
    zbar = np.asarray(zbar, dtype=float).ravel()
    if zbar.size < L * w:
        raise DimensionError(f"window holds {zbar.size // max(w, 1)} samples, need L={L}")
    zbar = zbar[-L * w:]
    fhat = batch_matrix(R, Q, M) @ zbar
    if x0 is not None:
        fhat += extended_observability(phi_cl, c1, L) @ np.asarray(x0, dtype=float)
    return fhat.reshape(L, nf)
