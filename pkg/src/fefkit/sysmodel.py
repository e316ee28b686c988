"""Linear state-space plants with additive faults, their Kalman predictor
form, zero-order-hold discretization, series connection and simulation.

Process form::

    x(k+1) = A x(k) + B u(k) + E f(k) + w1(k),   w1 ~ N(0, Q1)
    y(k)   = C x(k) + D u(k) + G f(k) + w2(k),   w2 ~ N(0, Q2)

Predictor (innovation) form::

    x(k+1) = Phi x(k) + Btilde u(k) + Etilde f(k) + K y(k)
    y(k)   = C x(k) + D u(k) + G f(k) + e(k),    e ~ N(0, SigmaE)
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as la

from . import _jsonio
from .errors import DimensionError, NoStabilizingSolution, NumericFailure, SimulationOverflow


def _mat(a, shape=None, name="matrix"):
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1) if shape is None or shape[1] == 1 else a.reshape(1, -1)
    if shape is not None:
        if a.size == 0 and 0 in shape:
            a = a.reshape(shape)
        if a.shape != tuple(shape):
            raise DimensionError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    return a


def psd_sqrt(q, tol=1e-12):
    """Symmetric square root of a positive semidefinite matrix (eigen-based).

    Tiny negative eigenvalues from round-off are clipped to zero.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.size == 0:
        return q.copy()
    q = 0.5 * (q + q.T)
    w, v = np.linalg.eigh(q)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.min(w) < -tol * scale:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {np.min(w):.3g})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def spectral_radius(a):
    a = np.atleast_2d(a)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time LTI system (Ac, Bc, Cc, Dc)."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray

    def __post_init__(self):
        n = np.atleast_2d(np.asarray(self.Ac, dtype=float)).shape[0] if np.size(self.Ac) else 0
        Ac = _mat(self.Ac, (n, n), "Ac") if n else np.zeros((0, 0))
        Dc = np.atleast_2d(np.asarray(self.Dc, dtype=float))
        ny, nu = Dc.shape
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", _mat(self.Bc, (n, nu), "Bc"))
        object.__setattr__(self, "Cc", _mat(self.Cc, (ny, n), "Cc"))
        object.__setattr__(self, "Dc", Dc)

    @property
    def n(self):
        return self.Ac.shape[0]

    @property
    def nu(self):
        return self.Dc.shape[1]

    @property
    def ny(self):
        return self.Dc.shape[0]

    @classmethod
    def from_tf(cls, num, den):
        """SISO controllable canonical realization of num(s)/den(s).

        Coefficients are in descending powers of s; the transfer function must
        be proper.
        """
        num = np.atleast_1d(np.asarray(num, dtype=float))
        den = np.atleast_1d(np.asarray(den, dtype=float))
        if len(num) > len(den):
            raise ValueError("transfer function is improper")
        num = np.concatenate([np.zeros(len(den) - len(num)), num]) / den[0]
        den = den / den[0]
        n = len(den) - 1
        d = num[0]
        if n == 0:
            return cls(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
        b = num[1:] - d * den[1:]
        Ac = np.zeros((n, n))
        Ac[:-1, 1:] = np.eye(n - 1)
        Ac[-1, :] = -den[1:][::-1]
        Bc = np.zeros((n, 1))
        Bc[-1, 0] = 1.0
        Cc = b[::-1].reshape(1, n)
        return cls(Ac, Bc, Cc, [[d]])

    def dc_gain(self):
        if self.n == 0:
            return self.Dc.copy()
        return self.Dc - self.Cc @ np.linalg.solve(self.Ac, self.Bc)


@dataclass(frozen=True)
class StateSpaceModel:
    """Discrete-time plant with additive faults and Gaussian noise."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    Q1: Optional[np.ndarray] = None
    Q2: Optional[np.ndarray] = None
    dt: float = 1.0

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        ny, nu = D.shape
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0] if A.ndim == 2 else (1 if A.size == 1 else 0)
        A = _mat(A, (n, n), "A") if n else np.zeros((0, 0))
        E = np.zeros((n, 0)) if self.E is None else _mat(self.E, None, "E")
        nf = E.shape[1]
        if E.shape[0] != n:
            raise DimensionError(f"E has {E.shape[0]} rows, expected {n}")
        G = np.zeros((ny, nf)) if self.G is None else _mat(self.G, (ny, nf), "G")
        Q1 = np.zeros((n, n)) if self.Q1 is None else _mat(self.Q1, (n, n), "Q1")
        Q2 = np.eye(ny) if self.Q2 is None else _mat(self.Q2, (ny, ny), "Q2")
        for name, q in (("Q1", Q1), ("Q2", Q2)):
            if not np.allclose(q, q.T, atol=1e-12):
                raise ValueError(f"{name} is not symmetric")
        psd_sqrt(Q1)
        psd_sqrt(Q2)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", _mat(self.B, (n, nu), "B"))
        object.__setattr__(self, "C", _mat(self.C, (ny, n), "C"))
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "Q1", Q1)
        object.__setattr__(self, "Q2", Q2)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def nu(self):
        return self.B.shape[1]

    @property
    def ny(self):
        return self.C.shape[0]

    @property
    def nf(self):
        return self.E.shape[1]

    def with_faults(self, E, G):
        return replace(self, E=E, G=G)

    def dc_gain(self):
        return self.D + self.C @ np.linalg.solve(np.eye(self.n) - self.A, self.B)

    def to_dict(self):
        d = {k: _jsonio.mat_to_json(getattr(self, k)) for k in ("A", "B", "C", "D", "E", "G", "Q1", "Q2")}
        d["kind"] = "state_space"
        d["dt"] = self.dt
        d["dims"] = {"n": self.n, "nu": self.nu, "ny": self.ny, "nf": self.nf}
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: _jsonio.mat_from_json(d[k]) for k in ("A", "B", "C", "D", "E", "G", "Q1", "Q2")}
        return cls(dt=d.get("dt", 1.0), **kw)


@dataclass(frozen=True)
class PredictorModel:
    """Innovation-form (steady-state Kalman predictor) representation."""

    Phi: np.ndarray
    Btilde: np.ndarray
    Etilde: np.ndarray
    K: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    SigmaE: np.ndarray

    @property
    def n(self):
        return self.Phi.shape[0]

    @property
    def nu(self):
        return self.Btilde.shape[1]

    @property
    def ny(self):
        return self.C.shape[0]

    @property
    def nf(self):
        return self.Etilde.shape[1]

    def markov(self, length):
        """Predictor Markov parameters ``(Hu, Hy, Hf)`` as ``(length, rows, cols)`` arrays."""
        ny = self.ny
        Hu = np.zeros((length, ny, self.nu))
        Hy = np.zeros((length, ny, ny))
        Hf = np.zeros((length, ny, self.nf))
        Hu[0], Hf[0] = self.D, self.G
        cp = self.C.copy()
        for i in range(1, length):
            Hu[i] = cp @ self.Btilde
            Hy[i] = cp @ self.K
            Hf[i] = cp @ self.Etilde
            cp = cp @ self.Phi
        return Hu, Hy, Hf

    def to_dict(self):
        d = {k: _jsonio.mat_to_json(getattr(self, k))
             for k in ("Phi", "Btilde", "Etilde", "K", "C", "D", "G", "SigmaE")}
        d["kind"] = "predictor"
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: _jsonio.mat_from_json(d[k])
                      for k in ("Phi", "Btilde", "Etilde", "K", "C", "D", "G", "SigmaE")})


@dataclass
class TimeSeries:
    """Sampled I/O record; optional fault and state ground truth."""

    u: np.ndarray
    y: np.ndarray
    f: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    k0: int = 0

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.u.shape[0] == 1 and self.y.shape[0] > 1:
            self.u = self.u.T
        rows = {self.u.shape[0], self.y.shape[0]}
        for name in ("f", "x"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.ndim == 1:
                    v = v.reshape(-1, 1)
                setattr(self, name, v)
                rows.add(v.shape[0])
        if len(rows) != 1:
            raise DimensionError(f"channels have unequal row counts {sorted(rows)}")

    def __len__(self):
        return self.y.shape[0]

    @property
    def t(self):
        return np.arange(self.k0, self.k0 + len(self))

    @property
    def nu(self):
        return self.u.shape[1]

    @property
    def ny(self):
        return self.y.shape[1]

    def to_csv(self, path):
        cols = ["k"] + [f"u{i + 1}" for i in range(self.nu)] + [f"y{i + 1}" for i in range(self.ny)]
        blocks = [self.t.reshape(-1, 1), self.u, self.y]
        if self.f is not None:
            cols += [f"f{i + 1}" for i in range(self.f.shape[1])]
            blocks.append(self.f)
        table = np.hstack(blocks)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k, row in zip(self.t, table):
                w.writerow([str(int(k))] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if body.ndim == 1:
            body = body.reshape(0, len(header))
        idx = {p: [i for i, h in enumerate(header) if h.startswith(p) and h[1:].isdigit()]
               for p in "uyf"}
        f = body[:, idx["f"]] if idx["f"] else None
        k0 = int(body[0, 0]) if len(body) else 0
        return cls(u=body[:, idx["u"]].reshape(len(body), -1),
                   y=body[:, idx["y"]].reshape(len(body), -1), f=f, k0=k0)


Model = Union[ContinuousModel, StateSpaceModel]


def zoh_discretize(m: ContinuousModel, dt: float) -> StateSpaceModel:
    """Zero-order-hold discretization through the augmented matrix exponential.

    ``expm([[Ac, Bc], [0, 0]] * dt) = [[A, B], [0, I]]``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, nu = m.n, m.nu
    aug = np.zeros((n + nu, n + nu))
    aug[:n, :n] = m.Ac
    aug[:n, n:] = m.Bc
    ex = la.expm(aug * dt)
    if not np.all(np.isfinite(ex)):
        raise NumericFailure("matrix exponential produced non-finite entries")
    return StateSpaceModel(A=ex[:n, :n], B=ex[:n, n:], C=m.Cc, D=m.Dc, dt=dt)


def _parts(m):
    if isinstance(m, ContinuousModel):
        return m.Ac, m.Bc, m.Cc, m.Dc
    return m.A, m.B, m.C, m.D


def series_connect(actuators: Sequence[Model], plant: Model) -> Model:
    """Feed the plant inputs through actuator dynamics.

    The actuators are stacked block-diagonally; their outputs must line up with
    the plant inputs. Actuator states come first in the combined state vector.
    Fault and noise channels of the plant are kept (zero-padded over actuator
    states). Continuous actuators require a continuous plant and vice versa.
    """
    continuous = isinstance(plant, ContinuousModel)
    if any(isinstance(a, ContinuousModel) != continuous for a in actuators):
        raise DimensionError("cannot mix continuous and discrete components")
    parts = [_parts(a) for a in actuators]
    Aa = la.block_diag(*[p[0] for p in parts]) if parts else np.zeros((0, 0))
    Ba = la.block_diag(*[p[1] for p in parts])
    Ca = la.block_diag(*[p[2] for p in parts])
    Da = la.block_diag(*[p[3] for p in parts])
    # block_diag drops zero-size blocks inconsistently; rebuild shapes explicitly
    na = sum(p[0].shape[0] for p in parts)
    nin = sum(p[3].shape[1] for p in parts)
    nout = sum(p[3].shape[0] for p in parts)
    Aa = Aa.reshape(na, na)
    Ba = Ba.reshape(na, nin)
    Ca = Ca.reshape(nout, na)
    Da = Da.reshape(nout, nin)
    Ap, Bp, Cp, Dp = _parts(plant)
    if nout != Bp.shape[1]:
        raise DimensionError(f"actuators provide {nout} outputs, plant expects {Bp.shape[1]} inputs")
    npl = Ap.shape[0]
    A = np.block([[Aa, np.zeros((na, npl))], [Bp @ Ca, Ap]])
    B = np.vstack([Ba, Bp @ Da])
    C = np.hstack([Dp @ Ca, Cp])
    D = Dp @ Da
    if continuous:
        return ContinuousModel(A, B, C, D)
    E = np.vstack([np.zeros((na, plant.nf)), plant.E])
    Q1 = la.block_diag(np.zeros((na, na)), plant.Q1)
    return StateSpaceModel(A, B, C, D, E=E, G=plant.G, Q1=Q1, Q2=plant.Q2, dt=plant.dt)


def to_predictor(m: StateSpaceModel) -> PredictorModel:
    """Steady-state Kalman predictor of the fault-free subsystem."""
    from .gain import solve_dare

    n, ny = m.n, m.ny
    bw = np.hstack([psd_sqrt(m.Q1), np.zeros((n, ny))])
    dw = np.hstack([np.zeros((ny, n)), psd_sqrt(m.Q2)])
    sol = solve_dare(m.A, bw, m.C, dw)
    P = sol.P
    sigma = m.C @ P @ m.C.T + m.Q2
    K = m.A @ P @ m.C.T @ np.linalg.inv(sigma)
    Phi = m.A - K @ m.C
    rho = spectral_radius(Phi)
    if not rho < 1:
        raise NoStabilizingSolution(f"predictor is not stable (spectral radius {rho:.6g}); "
                                    "(A, C) is not detectable")
    return PredictorModel(Phi=Phi, Btilde=m.B - K @ m.D, Etilde=m.E - K @ m.G, K=K,
                          C=m.C.copy(), D=m.D.copy(), G=m.G.copy(), SigmaE=0.5 * (sigma + sigma.T))


@dataclass(frozen=True)
class OutputFeedback:
    """Static output feedback ``u(k) = -F y(k) + eta(k)``.

    ``eta`` is either a constant vector or an ``(N, nu)`` array.
    """

    F: np.ndarray
    eta: np.ndarray = field(default=None)

    def reference(self, N, nu):
        if self.eta is None:
            return np.zeros((N, nu))
        eta = np.asarray(self.eta, dtype=float)
        if eta.ndim == 1:
            return np.tile(eta, (N, 1))
        if eta.shape[0] < N:
            raise DimensionError("reference shorter than horizon")
        return eta[:N]


@np.errstate(over="ignore", invalid="ignore")
def simulate(m: StateSpaceModel, u=None, f=None, seed=None, *, horizon=None, x0=None,
             noise=True) -> TimeSeries:
    """Simulate the process form with seeded Gaussian noise.

    Args:
        m: plant.
        u: ``(N, nu)`` open-loop input array, or an :class:`OutputFeedback` law.
            Under feedback, sensor faults enter ``y`` before the control law sees
            it, so they propagate around the loop.
        f: ``(N, nf)`` fault series (zero if omitted).
        seed: seed for ``numpy.random.default_rng``.
        horizon: number of samples when it cannot be inferred from ``u``/``f``.
        x0: initial state (zero by default).
        noise: draw w1, w2 when True.
    """
    lengths = [len(a) for a in (u, f) if a is not None and not isinstance(a, OutputFeedback)]
    N = horizon if horizon is not None else (min(lengths) if lengths else None)
    if N is None or N < 1:
        raise ValueError("horizon must be at least 1")
    n, nu, ny, nf = m.n, m.nu, m.ny, m.nf
    fs = np.zeros((N, nf)) if f is None else np.asarray(f, dtype=float).reshape(-1, nf)[:N]
    rng = np.random.default_rng(seed)
    if noise:
        w1 = rng.standard_normal((N, n)) @ psd_sqrt(m.Q1).T
        w2 = rng.standard_normal((N, ny)) @ psd_sqrt(m.Q2).T
    else:
        w1 = np.zeros((N, n))
        w2 = np.zeros((N, ny))
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    X = np.empty((N, n))
    Y = np.empty((N, ny))
    A, B, C, D, E, G = m.A, m.B, m.C, m.D, m.E, m.G
    if isinstance(u, OutputFeedback):
        F = np.asarray(u.F, dtype=float).reshape(nu, ny)
        eta = u.reference(N, nu)
        loop = np.linalg.inv(np.eye(ny) + D @ F)
        U = np.empty((N, nu))
        for k in range(N):
            X[k] = x
            y = loop @ (C @ x + D @ eta[k] + G @ fs[k] + w2[k])
            uk = eta[k] - F @ y
            Y[k], U[k] = y, uk
            x = A @ x + B @ uk + E @ fs[k] + w1[k]
            if not np.isfinite(x).all():
                raise SimulationOverflow(k + 1)
    else:
        U = np.zeros((N, nu)) if u is None else np.asarray(u, dtype=float).reshape(-1, nu)[:N]
        for k in range(N):
            X[k] = x
            Y[k] = C @ x + D @ U[k] + G @ fs[k] + w2[k]
            x = A @ x + B @ U[k] + E @ fs[k] + w1[k]
            if not np.isfinite(x).all():
                raise SimulationOverflow(k + 1)
    return TimeSeries(u=U, y=Y, f=fs if nf else None, x=X)


def save_model(path, model):
    _jsonio.write_json(path, model.to_dict())


def load_model(path):
    d = _jsonio.read_json(path)
    return PredictorModel.from_dict(d) if d.get("kind") == "predictor" else StateSpaceModel.from_dict(d)
