"""High-order VARX identification from fault-free input/output data."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _jsonio
from .errors import DimensionError, IllConditionedRegression
from .markov import MarkovSequence
from .sysmodel import TimeSeries

COND_LIMIT = 1e12


@dataclass
class VarxModel:
    """``y(k) = sum_i My[i-1] y(k-i) + sum_i Mu[i] u(k-i) + v(k)``.

    ``My`` holds lags ``1..p`` and ``Mu`` lags ``0..p``.
    """

    p: int
    My: np.ndarray  # (p, ny, ny)
    Mu: np.ndarray  # (p + 1, ny, nu)
    SigmaE: np.ndarray
    n_samples: int = 0
    cond: float = float("nan")
    data_hash: str = ""

    def __post_init__(self):
        self.My = np.asarray(self.My, dtype=float).reshape(self.p, *np.shape(self.SigmaE))
        ny = self.SigmaE.shape[0]
        self.Mu = np.asarray(self.Mu, dtype=float).reshape(self.p + 1, ny, -1)
        if not np.allclose(self.SigmaE, self.SigmaE.T, atol=1e-12 * max(1.0, np.abs(self.SigmaE).max())):
            raise ValueError("SigmaE must be symmetric")

    @property
    def ny(self):
        return self.SigmaE.shape[0]

    @property
    def nu(self):
        return self.Mu.shape[2]

    def to_dict(self):
        return {"p": self.p, "ny": self.ny, "nu": self.nu, "n_samples": self.n_samples,
                "cond": self.cond, "data_hash": self.data_hash,
                "My": [_jsonio.mat_to_json(m) for m in self.My],
                "Mu": [_jsonio.mat_to_json(m) for m in self.Mu],
                "SigmaE": _jsonio.mat_to_json(self.SigmaE)}

    @classmethod
    def from_dict(cls, d):
        ny, nu, p = d["ny"], d["nu"], d["p"]
        My = np.array([_jsonio.mat_from_json(m) for m in d["My"]]).reshape(p, ny, ny)
        Mu = np.array([_jsonio.mat_from_json(m) for m in d["Mu"]]).reshape(p + 1, ny, nu)
        return cls(p=p, My=My, Mu=Mu, SigmaE=_jsonio.mat_from_json(d["SigmaE"]).reshape(ny, ny),
                   n_samples=d.get("n_samples", 0), cond=d.get("cond", float("nan")),
                   data_hash=d.get("data_hash", ""))

    def save(self, path):
        _jsonio.write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.read_json(path))


def _regressors(u, y, p, direct_feedthrough=True):
    N = len(y)
    cols = [y[p - i:N - i] for i in range(1, p + 1)]
    lags = range(0 if direct_feedthrough else 1, p + 1)
    cols += [u[p - i:N - i] for i in lags]
    return np.hstack(cols), y[p:]


def fit_varx(data: TimeSeries, p: int, ridge: float = 0.0, direct_feedthrough: bool = True) -> VarxModel:
    """Least-squares VARX fit over samples ``k = p .. N-1``.

    Args:
        data: fault-free input/output record.
        p: lag order.
        ridge: Tikhonov weight on the coefficients.
        direct_feedthrough: estimate ``Mu[0]``. Switch it off for data taken
            under output feedback with a strictly proper plant, where ``u(k)``
            is correlated with ``v(k)`` and ``Mu[0]`` would be biased.

    Raises:
        IllConditionedRegression: regressors are rank deficient and
            ``ridge == 0``.
    """
    if p < 1:
        raise ValueError("VARX order must be at least 1")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    u, y = data.u, data.y
    N, ny, nu = len(y), y.shape[1], u.shape[1]
    if N <= p * (ny + nu) + nu:
        raise DimensionError(f"{N} samples are too few for a VARX({p}) with {ny} outputs and {nu} inputs")
    X, Y = _regressors(u, y, p, direct_feedthrough)
    if ridge > 0:
        Xa = np.vstack([X, np.sqrt(ridge) * np.eye(X.shape[1])])
        Ya = np.vstack([Y, np.zeros((X.shape[1], ny))])
    else:
        Xa, Ya = X, Y
    q, r = np.linalg.qr(Xa)
    d = np.abs(np.diag(r))
    cond = float(d.max() / d.min()) if d.min() > 0 else float("inf")
    if ridge == 0 and cond > COND_LIMIT:
        # diag(R) ratio underestimates; confirm with the true 2-norm condition number
        cond = float(np.linalg.cond(r))
        if cond > COND_LIMIT:
            raise IllConditionedRegression(cond)
    theta = np.linalg.solve(r, q.T @ Ya)
    v = Y - X @ theta
    sigma = v.T @ v / (N - p)
    coef = theta.T
    My = np.stack([coef[:, i * ny:(i + 1) * ny] for i in range(p)])
    off = p * ny
    mu_list = [] if direct_feedthrough else [np.zeros((ny, nu))]
    for i in range(p + 1 - len(mu_list)):
        mu_list.append(coef[:, off + i * nu:off + (i + 1) * nu])
    return VarxModel(p=p, My=My, Mu=np.stack(mu_list), SigmaE=0.5 * (sigma + sigma.T),
                     n_samples=N, cond=cond, data_hash=_jsonio.array_digest(u, y))


def varx_residuals(v: VarxModel, data: TimeSeries):
    """One-step prediction errors of ``v`` on ``data`` (samples ``p .. N-1``)."""
    X, Y = _regressors(data.u, data.y, v.p, True)
    coef = np.hstack(list(v.My) + list(v.Mu))
    return Y - X @ coef.T


def extract_mps(v: VarxModel, L: int):
    """Predictor Markov parameter estimates ``(Hu, Hy)`` of length ``L``."""
    if L < v.p + 1:
        warnings.warn(f"L={L} truncates the VARX({v.p}) coefficients", stacklevel=2)
    Hu = np.zeros((L, v.ny, v.nu))
    Hy = np.zeros((L, v.ny, v.ny))
    k = min(L, v.p + 1)
    Hu[:k] = v.Mu[:k]
    Hy[1:k] = v.My[:k - 1]
    return MarkovSequence(Hu), MarkovSequence(Hy)


@dataclass
class OrderReport:
    order: int
    candidates: list
    trace: list
    aic: list


def suggest_varx_order(data: TimeSeries, candidates: Sequence[int], rel_tol=0.01,
                       direct_feedthrough=True) -> OrderReport:
    """Smallest candidate whose AIC is within ``rel_tol`` of the best.

    All fits share the sample range of the largest candidate so that the
    criteria are comparable. Candidates with singular regressors get an
    infinite criterion.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("empty candidate list")
    pmax = cands[-1]
    u, y = data.u, data.y
    tr, aic = [], []
    for p in cands:
        sub = TimeSeries(u=u[pmax - p:], y=y[pmax - p:])
        try:
            v = fit_varx(sub, p, direct_feedthrough=direct_feedthrough)
        except IllConditionedRegression:
            # collinear lags carry no information beyond a lower order
            tr.append(float("nan"))
            aic.append(float("inf"))
            continue
        Neff = len(y) - pmax
        s = v.SigmaE
        ev = np.linalg.eigvalsh(s)
        ev = np.maximum(ev, 1e-12 * max(ev.max(), np.finfo(float).tiny))
        k = v.ny * (p * v.ny + (p + 1 if direct_feedthrough else p) * v.nu)
        tr.append(float(np.trace(s)))
        aic.append(float(Neff * np.sum(np.log(ev)) + 2 * k))
    best = min(aic)
    if not np.isfinite(best):
        raise IllConditionedRegression(float("inf"))
    chosen = next(p for p, a in zip(cands, aic) if a <= best + rel_tol * abs(best))
    return OrderReport(order=chosen, candidates=cands, trace=tr, aic=aic)
