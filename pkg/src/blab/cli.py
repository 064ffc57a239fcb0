"""Command-line entry point: ``blab run|sweep|tune|oracle|fitgh``.

Matrix rows and columns are numbered from 1 in every file and report this
tool writes; the library itself works with 0-based indices.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import experiment, tuning
from .errors import BlabError
from .matrix_core import generate_low_rank, subsampling_cost_family


def _print_summary(rows, out=None):
    out = out or sys.stdout
    w = max([len("policy")] + [len(f"{r.policy}({r.params})" if r.params else r.policy) for r in rows])
    print(f"{'policy':<{w}}  {'mean regret':>12}  {'se':>9}  {'ci95':>9}  reps", file=out)
    for r in rows:
        label = f"{r.policy}({r.params})" if r.params else r.policy
        print(f"{label:<{w}}  {r.mean_final_regret:12.2f}  {r.se:9.2f}  {r.ci95:9.2f}  {r.reps}", file=out)


def _config(args):
    cfg = experiment.load_config(args.config)
    if getattr(args, "out", None):
        cfg.output = args.out
    if cfg.output is None:
        cfg.output = str(Path(args.config).with_suffix("")) + "_out"
    return cfg


def cmd_run(args):
    cfg = _config(args)
    result = experiment.run(cfg, args.threads)
    _print_summary(result.summary)
    print(f"wrote {cfg.output}/traces.csv and summary.csv")
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    grid = experiment.parse_grid(Path(args.grid).read_text(encoding="utf-8"))
    result = experiment.sweep(cfg, grid, args.threads)
    _print_summary(result.summary)
    print(f"wrote {cfg.output}/traces.csv and summary.csv")
    return 0


def _models(cfg, args):
    d_r, d_c = cfg.dims
    model = tuning.CostModel(
        d_r=d_r, d_c=d_c, rank=cfg.rank, omega1=args.omega1, omega2=args.omega2,
        b_star=args.b_star, mu_star=args.mu_star, c1=args.c1, c2=args.c2,
    )
    if args.g == "fit":
        g_eval = tuning.ExpFitG(args.a1, args.b1)
    else:
        truth, _ = experiment.make_instance(cfg, 0)
        g_eval = tuning.EmpiricalG(truth, seed=cfg.master_seed)
    if args.psi == "fit":
        psi_eval = tuning.FitPsi(d_r, d_c, args.a2, args.b2)
    else:
        psi_eval = tuning.ClosedFormPsi(args.psi, d_r, d_c)
    return model, g_eval, psi_eval


def cmd_tune(args):
    cfg = experiment.load_config(args.config)
    model, g_eval, psi_eval = _models(cfg, args)
    T = args.horizon or cfg.horizon
    full = tuning.select_h(model, T, g_eval)
    sub = tuning.select_submatrix(model, psi_eval, T, g_eval)
    T_ss = tuning.estimate_T_ss(model, psi_eval, g_eval)
    block = {
        "horizon": T,
        "h": f"{full.h:.6g}",
        "case": full.case,
        "forced_sampling": "on" if full.forced_sampling else "off",
        "m_r": sub.m_r,
        "m_c": sub.m_c,
        "h_sub": f"{sub.h:.6g}",
        "T_ss": "inf" if math.isinf(T_ss) else T_ss,
    }
    for k, v in block.items():
        print(f"{k}={v}")
    if args.curves:
        lo = tuning.h_lower_bound(T, model)
        hs = np.linspace(lo, 2 * model.b_star, 200)
        p1 = tuning.phi1(hs, T, model)
        p2 = tuning.phi2(hs, T, model, g_eval)
        with open(args.curves, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "phi1", "phi2"])
            for row in zip(hs, p1, p2):
                w.writerow([repr(float(x)) for x in row])
    return 0


def cmd_oracle(args):
    from .oracles import run_oracle

    reports = run_oracle(args.name)
    for rep in reports:
        print(rep.text())
    return 0 if all(r.ok for r in reports) else 1


def cmd_fitgh(args):
    cfg = experiment.load_config(args.config)
    if cfg.generator != "low_rank":
        raise BlabError("fitgh needs the low_rank generator")
    d_r, d_c = cfg.dims
    factors = cfg.env.get("factors", "uniform01")

    def sampler(rng):
        return generate_low_rank(d_r, d_c, cfg.rank, factors, rng)

    hs = np.linspace(args.h_min, args.h_max, args.h_points)
    gs = tuning.family_g_curve(sampler, hs, args.n_matrices, cfg.master_seed)
    etas = np.round(np.arange(1, 10) / 10, 10)
    psis = []
    for eta in etas:
        m_r, m_c = max(1, round(eta * d_r)), max(1, round(eta * d_c))
        psis.append(subsampling_cost_family(sampler, m_r, m_c, args.psi_samples, cfg.master_seed).value)
    fit = tuning.fit_g_and_psi(hs, gs, etas, psis)
    print(f"a1={fit.a1:.4f}\nb1={fit.b1:.4f}\nr2_g={fit.r2_g:.4f}")
    print(f"a2={fit.a2:.4f}\nb2={fit.b2:.4f}\nr2_psi={fit.r2_psi:.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="blab", description="Low-rank bandit simulation laboratory.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--threads", type=int, help="worker processes (capped by BLAB_THREADS)")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a config over a grid of policy parameters")
    s.add_argument("config")
    s.add_argument("--grid", required=True, help="file with lines 'key = v1, v2, ...'")
    s.add_argument("--threads", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("tune", help="select h, submatrix size and T_ss from the bound")
    t.add_argument("config")
    t.add_argument("--horizon", type=int, help="defaults to the config's horizon")
    for name in ("omega1", "omega2", "b-star", "mu-star", "c1", "c2"):
        t.add_argument(f"--{name}", type=float, default=1.0)
    t.add_argument("--g", choices=["fit", "empirical"], default="fit")
    t.add_argument("--a1", type=float, default=1.719)
    t.add_argument("--b1", type=float, default=0.057)
    t.add_argument("--psi", choices=["fit", "uniform", "gaussian", "exponential"], default="fit")
    t.add_argument("--a2", type=float, default=-2.074)
    t.add_argument("--b2", type=float, default=-0.002)
    t.add_argument("--curves", help="write phi1/phi2 over h to this CSV")
    t.set_defaults(func=cmd_tune)

    o = sub.add_parser("oracle", help="check fast paths against brute force")
    o.add_argument("name", help="g, psi, prox, lambda_max, formulas or all")
    o.set_defaults(func=cmd_oracle)

    f = sub.add_parser("fitgh", help="fit log g(h) and psi(eta) on the config's matrix family")
    f.add_argument("config")
    f.add_argument("--h-min", type=float, default=0.0)
    f.add_argument("--h-max", type=float, default=2.0)
    f.add_argument("--h-points", type=int, default=21)
    f.add_argument("--n-matrices", type=int, default=100)
    f.add_argument("--psi-samples", type=int, default=2000)
    f.set_defaults(func=cmd_fitgh)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BlabError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"blab: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
