"""Online recursion of the fault estimation filter."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _jsonio
from .errors import DimensionError, DivergenceError
from .realize import FefRealization
from .sysmodel import TimeSeries, spectral_radius

DIVERGENCE_LIMIT = 1e12


@dataclass
class EstimateRecord:
    k: int
    fhat: np.ndarray
    rtilde: np.ndarray
    transient: bool = False


class FefFilter:
    """Streaming filter fed one ``(u(j), y(j))`` pair at a time.

    The estimate for time ``k`` becomes available after sample ``k + tau``.
    Use :meth:`assemble` to build one.
    """

    def __init__(self, real: FefRealization, Kr, transient: int = 0):
        self.real = real
        self.Kr = np.asarray(Kr, dtype=float).reshape(real.order, real.ny)
        self.closed_loop = real.Phi1 - self.Kr @ real.C2
        self.radius = spectral_radius(self.closed_loop) if real.order else 0.0
        self.transient = int(transient)
        self.reset()

    @classmethod
    def assemble(cls, real: FefRealization, Kr=None, transient: Optional[int] = None):
        """Filter with zero state. ``Kr=None`` (or zeros) gives the open-loop inverse."""
        n, ny = real.order, real.ny
        if Kr is None:
            Kr = np.zeros((n, ny))
        Kr = np.atleast_2d(np.asarray(Kr, dtype=float))
        if n == 0:
            Kr = Kr.reshape(0, ny)
        if Kr.shape != (n, ny):
            raise DimensionError(f"gain is {Kr.shape}, filter needs {(n, ny)}")
        if real.Bz.shape != (n, real.width):
            raise DimensionError(f"Bz is {real.Bz.shape}, expected {(n, real.width)}")
        if transient is None:
            transient = int(real.meta.get("L", 0))
        return cls(real, Kr, transient)

    def reset(self):
        t = self.real.tau + 1
        self.x = np.zeros(self.real.order)
        self._u = deque(maxlen=t)
        self._y = deque(maxlen=t)
        self.count = 0

    @property
    def stable(self):
        return self.radius < 1.0

    def _window(self):
        return np.concatenate(list(self._u) + list(self._y))

    def update(self, z):
        """One recursion on a stacked window ``z``; returns ``(fhat, rtilde)``."""
        r = self.real
        x = self.x
        fhat = r.C1 @ x + r.DG1 @ z
        rt = -(r.C2 @ x) + r.DG2 @ z
        x = r.Phi1 @ x + r.Bz @ z + self.Kr @ rt
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            raise DivergenceError(self.count)
        self.x = x
        return fhat, rt

    def step(self, u, y) -> Optional[EstimateRecord]:
        """Push one sample; returns ``None`` while the window is filling."""
        self._u.append(np.asarray(u, dtype=float).reshape(self.real.nu))
        self._y.append(np.asarray(y, dtype=float).reshape(self.real.ny))
        j = self.count
        self.count += 1
        if j < self.real.tau:
            return None
        fhat, rt = self.update(self._window())
        k = j - self.real.tau
        return EstimateRecord(k=k, fhat=fhat, rtilde=rt, transient=k < self.transient)

    def run(self, data: TimeSeries, window=None, onset=None) -> "FilterRun":
        """Replay ``data`` through :meth:`step` and score against ``data.f``.

        ``window = (start, stop)`` selects the RMSE samples (by fault time
        index). By default it starts ``2 * order`` samples after the first
        nonzero fault sample, or after ``onset`` when given.
        """
        recs = []
        for uj, yj in zip(data.u, data.y):
            rec = self.step(uj, yj)
            if rec is not None:
                recs.append(rec)
        nf, ny = self.real.nf, self.real.ny
        k = np.array([r.k for r in recs], dtype=int) + data.k0
        fhat = np.array([r.fhat for r in recs]).reshape(-1, nf)
        rt = np.array([r.rtilde for r in recs]).reshape(-1, ny)
        flags = np.array([r.transient for r in recs], dtype=bool)
        out = FilterRun(k=k, fhat=fhat, rtilde=rt, transient=flags, radius=self.radius)
        if data.f is not None and len(k):
            truth = np.asarray(data.f)[k - data.k0]
            if window is None:
                if onset is None:
                    nz = np.flatnonzero(np.any(np.asarray(data.f) != 0, axis=1))
                    onset = int(nz[0]) if nz.size else 0
                window = (onset + 2 * self.real.order, None)
            out.window = window
            out.rmse = rmse(fhat, truth, k - data.k0, window)
        return out


def rmse(fhat, truth, k, window):
    """Per-channel RMSE over fault-time indices ``start <= k < stop``."""
    start, stop = window
    sel = (k >= start) & (k < (stop if stop is not None else np.inf))
    if not sel.any():
        return np.full(fhat.shape[1], np.nan)
    return np.sqrt(np.mean((fhat[sel] - truth[sel]) ** 2, axis=0))


@dataclass
class FilterRun:
    k: np.ndarray
    fhat: np.ndarray
    rtilde: np.ndarray
    transient: np.ndarray
    radius: float
    rmse: Optional[np.ndarray] = None
    window: Optional[tuple] = None

    def to_csv(self, path):
        nf, ny = self.fhat.shape[1], self.rtilde.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"fhat{i + 1}" for i in range(nf)]
                       + [f"rtilde{i + 1}" for i in range(ny)] + ["flag"])
            for i in range(len(self.k)):
                w.writerow([int(self.k[i])] + [repr(float(v)) for v in self.fhat[i]]
                           + [repr(float(v)) for v in self.rtilde[i]]
                           + ["transient" if self.transient[i] else "ok"])


def save_filter(path, real: FefRealization, Kr, diagnostics=None, existence=None):
    d = {"kind": "fef_filter", "realization": real.to_dict(),
         "Kr": _jsonio.mat_to_json(np.asarray(Kr, dtype=float)),
         "diagnostics": diagnostics or {}, "existence": existence or {}}
    _jsonio.write_json(path, d)


def load_filter(path) -> FefFilter:
    d = _jsonio.read_json(path)
    real = FefRealization.from_dict(d["realization"])
    Kr = _jsonio.mat_from_json(d["Kr"]).reshape(real.order, real.ny)
    return FefFilter.assemble(real, Kr)
