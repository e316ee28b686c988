"""Benchmark on the closed-loop VTOL aircraft: identification, four filter
designs, order sweeps and Monte Carlo summaries."""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _jsonio
from .errors import FefError
from .filtering import FefFilter
from .gain import check_existence, design_gain
from .identify import extract_mps, fit_varx
from .markov import FaultChannel, fef_markov
from .realize import fef_from_predictor, ho_kalman, realize_from_markov
from .sysmodel import (ContinuousModel, OutputFeedback, StateSpaceModel, TimeSeries,
                       series_connect, simulate, spectral_radius, to_predictor, zoh_discretize)

ALGORITHMS = ("Alg0", "Alg1", "Alg2", "Alg3")

# Linearized longitudinal VTOL dynamics (horizontal velocity, vertical
# velocity, pitch rate, pitch angle) from the public benchmark literature.
VTOL_A = np.array([[-0.0366, 0.0271, 0.0188, -0.4555],
                   [0.0482, -1.01, 0.0024, -4.0208],
                   [0.1002, 0.3681, -0.7070, 1.420],
                   [0.0, 0.0, 1.0, 0.0]])
VTOL_B = np.array([[0.4422, 0.1761],
                   [3.5446, -7.5922],
                   [-5.52, 4.49],
                   [0.0, 0.0]])
VTOL_C = np.array([[1.0, 0.0, 0.0, 0.0],
                   [0.0, 1.0, 0.0, 0.0],
                   [0.0, 0.0, 1.0, 0.0],
                   [0.0, 1.0, 1.0, 1.0]])
ACTUATOR_NUM = (21.3501, 162.3867)
ACTUATOR_DEN = (1.0, 17.9994, 162.3867)
VTOL_F = np.array([[0.0, 0.0, -0.5, 0.0],
                   [0.0, 0.0, -0.1, -0.1]])
VTOL_DT = 0.5

SCENARIO_FAULTS = {
    "actuator": (FaultChannel("actuator", 0), FaultChannel("actuator", 1)),
    "sensor": (FaultChannel("sensor", 0), FaultChannel("sensor", 1)),
}


def build_vtol(q_process=1e-4, q_measure=0.0016):
    """Discrete closed-loop benchmark plant and its stabilizing controller.

    Returns the 8-state plant (actuator states first) and the output feedback
    gain ``F`` of ``u = -F y + eta``.
    """
    act = ContinuousModel.from_tf(ACTUATOR_NUM, ACTUATOR_DEN)
    plant = ContinuousModel(VTOL_A, VTOL_B, VTOL_C, np.zeros((4, 2)))
    if not np.max(np.linalg.eigvals(VTOL_A).real) > 0:
        raise ValueError("aircraft core is expected to be open-loop unstable")
    d = zoh_discretize(series_connect([act, act], plant), VTOL_DT)
    na = d.n - 4
    Q1 = np.diag(np.r_[np.zeros(na), np.full(4, q_process)])
    m = StateSpaceModel(d.A, d.B, d.C, d.D, Q1=Q1, Q2=q_measure * np.eye(4), dt=VTOL_DT)
    rho = spectral_radius(m.A - m.B @ VTOL_F @ m.C)
    if not rho < 1:
        raise ValueError(f"controller does not stabilize the plant (spectral radius {rho:.4g})")
    return m, VTOL_F.copy()


def plant_faults(m: StateSpaceModel, faults):
    """Process-form fault matrices ``(E, G)``."""
    E = np.zeros((m.n, len(faults)))
    G = np.zeros((m.ny, len(faults)))
    for i, fc in enumerate(faults):
        if fc.kind == "actuator":
            E[:, i], G[:, i] = m.B[:, fc.index], m.D[:, fc.index]
        else:
            G[fc.index, i] = 1.0
    return E, G


def fault_profile(horizon, onset=500):
    """``[1, sin(0.01 pi k)]`` for ``k > onset``, zero before."""
    k = np.arange(horizon)
    f = np.column_stack([np.ones(horizon), np.sin(0.01 * np.pi * k)])
    f[k <= onset] = 0.0
    return f


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "sensor"
    n_id: int = 20000
    p: int = 12
    L: int = 90
    l: int = 45
    m: int = 45
    order: int = 8
    algorithms: Tuple[str, ...] = ALGORITHMS
    seeds: Tuple[int, ...] = tuple(range(25))
    horizon: int = 1000
    onset: int = 500
    rmse_start: int = 600
    eta: Tuple[float, ...] = (2.0, 2.0)
    eta_id_std: float = 1.0
    q_process: float = 1e-4
    q_measure: float = 0.0016
    scale: str = "desk"

    def __post_init__(self):
        if self.scenario not in SCENARIO_FAULTS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not self.onset < self.horizon:
            raise ValueError("fault onset must precede the horizon")
        if self.l + self.m > self.L:
            raise ValueError("l + m must not exceed L")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms {sorted(bad)}")

    @classmethod
    def preset(cls, scenario="sensor", scale="desk", **kw):
        if scale == "full":
            base = dict(n_id=100000, seeds=tuple(range(100)))
        elif scale == "desk":
            base = {}
        else:
            raise ValueError(f"unknown scale {scale!r}")
        base.update(kw)
        return cls(scenario=scenario, scale=scale, **base)

    @property
    def faults(self):
        return SCENARIO_FAULTS[self.scenario]

    def to_dict(self):
        d = asdict(self)
        d["algorithms"] = list(self.algorithms)
        d["seeds"] = list(self.seeds)
        d["eta"] = list(self.eta)
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunContext:
    """Everything one seed shares across algorithms and orders."""

    cfg: ScenarioConfig
    seed: int
    plant: StateSpaceModel
    predictor: object
    test: TimeSeries
    varx: object = None
    Hu: object = None
    Hy: object = None


def _seeds(seed):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(3)]


def prepare(cfg: ScenarioConfig, seed: int, identify=True) -> RunContext:
    """Simulate the identification and faulty test records for ``seed`` and fit the VARX."""
    plant, F = build_vtol(cfg.q_process, cfg.q_measure)
    pred = to_predictor(plant)
    s_eta, s_id, s_test = _seeds(seed)
    E, G = plant_faults(plant, cfg.faults)
    faulty = plant.with_faults(E, G)
    f = fault_profile(cfg.horizon, cfg.onset)
    test = simulate(faulty, OutputFeedback(F, np.asarray(cfg.eta, dtype=float)), f, seed=s_test)
    ctx = RunContext(cfg=cfg, seed=seed, plant=plant, predictor=pred, test=test)
    if identify:
        eta = cfg.eta_id_std * np.random.default_rng(s_eta).standard_normal((cfg.n_id, plant.nu))
        data = simulate(plant, OutputFeedback(F, eta), seed=s_id, horizon=cfg.n_id)
        # strictly proper plant under feedback: u(k) is correlated with the innovation
        ctx.varx = fit_varx(data, cfg.p, direct_feedthrough=False)
        ctx.Hu, ctx.Hy = extract_mps(ctx.varx, cfg.L + cfg.p + 1)
    return ctx


def _design(alg, ctx: RunContext, order):
    cfg = ctx.cfg
    faults = list(cfg.faults)
    if alg == "Alg0":
        Hu, Hy, _ = ctx.predictor.markov(cfg.L + cfg.p + 1)
        fm = fef_markov(Hu, Hy, faults, cfg.L)
        # exact Markov parameters: never ask for more states than the numerical rank
        H = _hankel_R(fm, cfg)
        sv = np.linalg.svd(H, compute_uv=False)
        order = min(order, int(np.sum(sv > max(H.shape) * np.finfo(float).eps * sv[0])))
        real = realize_from_markov(fm, cfg.l, cfg.m, order, ctx.plant.nu, ctx.plant.ny,
                                   meta={"L": cfg.L})
        sigma = ctx.predictor.SigmaE
    elif alg == "Alg1":
        pred = ho_kalman(ctx.Hu, ctx.Hy, order, cfg.l, cfg.m, SigmaE=ctx.varx.SigmaE)
        real = fef_from_predictor(pred, faults=faults)
        real.meta["L"] = cfg.L
        sigma = ctx.varx.SigmaE
    else:
        fm = fef_markov(ctx.Hu, ctx.Hy, faults, cfg.L)
        real = realize_from_markov(fm, cfg.l, cfg.m, order, ctx.plant.nu, ctx.plant.ny,
                                   meta={"L": cfg.L, "p": cfg.p})
        sigma = ctx.varx.SigmaE
    if alg == "Alg2":
        return real, np.zeros((real.order, real.ny)), {}
    g = design_gain(real, sigma)
    info = g.diagnostics()
    info["existence"] = check_existence(real, sigma, g.alpha).to_dict()
    info["existence"].pop("pbh")
    return real, g.Kr, info


def _hankel_R(fm, cfg):
    from .realize import build_hankel
    return build_hankel(fm.R, cfg.l, cfg.m)


def run_algorithm(alg: str, cfg: ScenarioConfig, seed: int, order: Optional[int] = None,
                  ctx: Optional[RunContext] = None) -> dict:
    """Design and evaluate one filter; failures are recorded in ``status``."""
    order = cfg.order if order is None else order
    if ctx is None:
        ctx = prepare(cfg, seed, identify=alg != "Alg0")
    rec = {"alg": alg, "seed": seed, "order": order, "p": cfg.p, "status": "ok",
           "rmse": [float("nan")] * len(cfg.faults), "stable": False,
           "radius": float("nan"), "open_loop_radius": float("nan")}
    try:
        real, Kr, info = _design(alg, ctx, order)
    except FefError as exc:
        rec.update(status="design-failure", message=str(exc))
        return rec
    flt = FefFilter.assemble(real, Kr)
    rec.update(realized_order=real.order, tau=real.tau, radius=float(flt.radius),
               stable=bool(flt.stable), open_loop_radius=float(spectral_radius(real.Phi1)), design=info)
    try:
        out = flt.run(ctx.test, window=(cfg.rmse_start, None))
        rec["rmse"] = [float(v) for v in out.rmse]
    except FefError as exc:
        rec.update(status="divergence", message=str(exc))
    return rec


def _seed_runs(args):
    cfg, seed, orders = args
    ctx = prepare(cfg, seed, identify=any(a != "Alg0" for a in cfg.algorithms))
    return [run_algorithm(a, cfg, seed, order=o, ctx=ctx) for o in orders for a in cfg.algorithms]


def _collect(cfg, orders, workers):
    jobs = [(cfg, s, tuple(orders)) for s in cfg.seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_seed_runs, jobs))
    else:
        chunks = [_seed_runs(j) for j in jobs]
    runs = [r for c in chunks for r in c]
    return sorted(runs, key=lambda r: (r["p"], r["order"], r["alg"], r["seed"]))


def _quantiles(values):
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return None
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]),
            "max": float(q[4]), "mean": float(v.mean()), "count": int(v.size)}


def _summary(runs, key):
    groups = {}
    for r in runs:
        groups.setdefault((r[key], r["alg"]), []).append(r)
    out = []
    for (kv, alg), rs in sorted(groups.items()):
        per_run = [float(np.mean(r["rmse"])) for r in rs]
        out.append({key: kv, "alg": alg, "runs": len(rs),
                    "stable": sum(r["stable"] for r in rs),
                    "failures": sum(r["status"] != "ok" for r in rs),
                    "rmse_mean_channel": _quantiles(per_run),
                    "rmse_per_channel": [_quantiles([r["rmse"][c] for r in rs])
                                         for c in range(len(rs[0]["rmse"]))]})
    return out


@dataclass
class BenchReport:
    config: dict
    config_hash: str
    runs: list
    tables: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "config_hash": self.config_hash, "runs": self.runs,
                "tables": self.tables}

    def to_json(self):
        return _jsonio.dumps(self.to_dict()) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_csv(self, path):
        nf = max((len(r["rmse"]) for r in self.runs), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["order", "alg", "seed"] + [f"rmse{i + 1}" for i in range(nf)]
                       + ["stable"] + (["p"] if len({r["p"] for r in self.runs}) > 1 else []))
            multi_p = len({r["p"] for r in self.runs}) > 1
            for r in self.runs:
                row = [r["order"], r["alg"], r["seed"]] + [repr(v) for v in r["rmse"]]
                row.append(int(r["stable"]))
                if multi_p:
                    row.append(r["p"])
                w.writerow(row)

    def select(self, **kw):
        return [r for r in self.runs if all(r.get(k) == v for k, v in kw.items())]


def _report(cfg, runs, tables):
    return BenchReport(config=cfg.to_dict(), config_hash=cfg.digest(), runs=runs, tables=tables)


def bench(cfg: ScenarioConfig, workers=1) -> BenchReport:
    """All configured algorithms at the configured order."""
    runs = _collect(cfg, [cfg.order], workers)
    return _report(cfg, runs, {"summary": _summary(runs, "order")})


def sweep_orders(cfg: ScenarioConfig, orders: Sequence[int], workers=1) -> BenchReport:
    """One design and evaluation per order, algorithm and seed."""
    runs = _collect(cfg, list(orders), workers)
    return _report(cfg, runs, {"order_sweep": _summary(runs, "order")})


def monte_carlo(cfg: ScenarioConfig, runs: Optional[int] = None, varx_orders=None,
                workers=1) -> BenchReport:
    """Independent seeded runs for each VARX order with boxplot quantiles."""
    if runs is not None:
        cfg = replace(cfg, seeds=tuple(range(runs)))
    orders = list(varx_orders) if varx_orders else [cfg.p]
    all_runs = []
    for p in orders:
        all_runs += _collect(replace(cfg, p=p), [cfg.order], workers)
    all_runs.sort(key=lambda r: (r["p"], r["order"], r["alg"], r["seed"]))
    base = replace(cfg, p=orders[0]) if len(orders) == 1 else cfg
    rep = _report(base, all_runs, {"monte_carlo": _summary(all_runs, "p")})
    rep.config["varx_orders"] = orders
    return rep
