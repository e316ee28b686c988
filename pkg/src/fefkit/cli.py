"""Command line entry point: ``fefkit <command> ...``."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (ScenarioConfig, build_vtol, fault_profile, monte_carlo, plant_faults,
                    sweep_orders, bench as run_bench)
from .errors import FefError
from .filtering import FefFilter, load_filter, save_filter
from .gain import check_existence, design_gain
from .identify import VarxModel, extract_mps, fit_varx, suggest_varx_order
from .markov import fef_markov, format_faults, parse_faults
from .realize import build_hankel, realize_from_markov, suggest_order
from .sysmodel import OutputFeedback, TimeSeries, simulate


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def cmd_simulate(a):
    plant, F = build_vtol()
    if a.kind == "identification":
        eta = np.random.default_rng(a.seed).standard_normal((a.n, plant.nu))
        data = simulate(plant, OutputFeedback(F, eta), seed=a.seed + 1, horizon=a.n)
    else:
        cfg = ScenarioConfig(scenario=a.scenario)
        E, G = plant_faults(plant, cfg.faults)
        data = simulate(plant.with_faults(E, G), OutputFeedback(F, np.array(cfg.eta)),
                        fault_profile(a.n, cfg.onset), seed=a.seed)
    data.to_csv(a.out)
    print(f"wrote {len(data)} samples to {a.out}")


def cmd_identify(a):
    data = TimeSeries.from_csv(a.data)
    if a.suggest:
        rep = suggest_varx_order(data, _ints(a.suggest), direct_feedthrough=not a.no_feedthrough)
        for p, t, c in zip(rep.candidates, rep.trace, rep.aic):
            print(f"p={p:3d}  trace(SigmaE)={t:.6g}  AIC={c:.6g}")
        print(f"suggested order: {rep.order}")
    v = fit_varx(data, a.order, ridge=a.ridge, direct_feedthrough=not a.no_feedthrough)
    v.save(a.out)
    print(f"VARX({v.p}) fitted on {v.n_samples} samples, regressor condition {v.cond:.3g}")


def cmd_design(a):
    v = VarxModel.load(a.varx)
    faults = parse_faults(a.fault)
    L = a.L
    l = a.l if a.l is not None else L // 2
    m = a.m if a.m is not None else L - l
    Hu, Hy = extract_mps(v, max(L + v.p + 1, v.p + 1))
    fm = fef_markov(Hu, Hy, faults, L, tol=a.tau_tol)
    sv = np.linalg.svd(build_hankel(fm.R, l, m), compute_uv=False)
    hint = suggest_order(sv, window=(1, min(len(sv) - 1, 4 * max(a.order, 1))))
    meta = {"p": v.p, "L": L, "data_hash": v.data_hash, "faults": format_faults(faults)}
    real = realize_from_markov(fm, l, m, a.order, v.nu, v.ny, meta=meta)
    if a.open_loop:
        Kr = np.zeros((real.order, real.ny))
        diag = {"open_loop": True}
        exist = {}
    else:
        g = design_gain(real, v.SigmaE)
        Kr, diag = g.Kr, g.diagnostics()
        exist = check_existence(real, v.SigmaE, g.alpha).to_dict()
    flt = FefFilter.assemble(real, Kr)
    diag.update(order=real.order, tau=real.tau, closed_loop_radius=float(flt.radius),
                suggested_order=hint.order, suggestion_confident=hint.confident,
                pi_residuals=list(real.pi_residuals()))
    save_filter(a.out, real, Kr, diag, exist)
    print(f"tau={real.tau} order={real.order} closed-loop spectral radius={flt.radius:.6g}")
    print(f"largest singular-value gap suggests order {hint.order}"
          + ("" if hint.confident else " (low confidence)"))


def cmd_run(a):
    flt = load_filter(a.filter)
    data = TimeSeries.from_csv(a.data)
    window = tuple(a.window) if a.window else None
    out = flt.run(data, window=window)
    out.to_csv(a.out)
    print(f"wrote {len(out.k)} estimates to {a.out}")
    if out.rmse is not None:
        print("RMSE " + " ".join(f"{v:.6g}" for v in out.rmse))


def _cfg(a, **kw):
    extra = {}
    if getattr(a, "seeds", None):
        extra["seeds"] = tuple(range(a.seeds))
    if getattr(a, "algorithms", None):
        extra["algorithms"] = tuple(a.algorithms.split(","))
    extra.update(kw)
    return ScenarioConfig.preset(a.scenario, a.scale, **extra)


def _finish(rep, a):
    rep.save(a.out)
    csv_path = a.csv or a.out.rsplit(".", 1)[0] + ".csv"
    rep.write_csv(csv_path)
    print(f"wrote {a.out} and {csv_path}")


def cmd_bench(a):
    cfg = _cfg(a)
    rep = sweep_orders(cfg, _ints(a.orders), workers=a.workers) if a.orders else \
        run_bench(cfg, workers=a.workers)
    _finish(rep, a)


def cmd_mc(a):
    cfg = _cfg(a)
    rep = monte_carlo(cfg, runs=a.runs, varx_orders=_ints(a.varx_orders), workers=a.workers)
    _finish(rep, a)


def build_parser():
    ap = argparse.ArgumentParser(prog="fefkit", description="Data-driven fault estimation filters.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate the closed-loop VTOL benchmark")
    s.add_argument("--kind", choices=["identification", "faulty"], default="identification")
    s.add_argument("--scenario", choices=["sensor", "actuator"], default="sensor")
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("identify", help="fit a VARX model to fault-free data")
    s.add_argument("--data", required=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--ridge", type=float, default=0.0)
    s.add_argument("--no-feedthrough", action="store_true",
                   help="fix the lag-0 input coefficient at zero (closed-loop data)")
    s.add_argument("--suggest", help="comma-separated candidate orders to compare by AIC")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("design", help="realize the filter and design its gain")
    s.add_argument("--varx", required=True)
    s.add_argument("--fault", required=True, help='e.g. "actuator:1,2" or "sensor:1;actuator:2"')
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--L", type=int, default=90)
    s.add_argument("--l", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--tau-tol", type=float, default=1e-6)
    s.add_argument("--open-loop", action="store_true", help="skip the gain design (Kr = 0)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("run", help="run a designed filter over a data file")
    s.add_argument("--filter", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--window", type=int, nargs=2, metavar=("START", "STOP"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    for name, helptext in (("bench", "benchmark Alg0-Alg3"), ("mc", "Monte Carlo over VARX orders")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--scenario", choices=["sensor", "actuator"], default="sensor")
        s.add_argument("--scale", choices=["desk", "full"], default="desk")
        s.add_argument("--seeds", type=int, help="number of seeds (0..n-1)")
        s.add_argument("--algorithms", help="comma-separated subset of Alg0,Alg1,Alg2,Alg3")
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--out", default=f"{name}_report.json")
        s.add_argument("--csv", help="CSV table path (default: next to the JSON report)")
        if name == "bench":
            s.add_argument("--orders", help="comma-separated filter orders to sweep")
            s.set_defaults(func=cmd_bench)
        else:
            s.add_argument("--runs", type=int)
            s.add_argument("--varx-orders", default="12")
            s.set_defaults(func=cmd_mc)
    return ap


def main(argv=None):
    a = build_parser().parse_args(argv)
    try:
        a.func(a)
    except FefError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
