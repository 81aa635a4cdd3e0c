"""Command line entry point: ``intcl {trial,monte-carlo,check}``."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .estimator import Gains
from .harness import (LABELS, OUTPUT_ENV, PAIR, McConfig, load_config, parse_overrides,
                      run_monte_carlo)
from .model import lookup_model, registered_models
from .sim import METHODS, TrialConfig, run_trial


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(","))


def _add_trial(sub):
    p = sub.add_parser("trial", help="run one closed-loop trial")
    p.add_argument("--model", default="two_state", choices=registered_models())
    p.add_argument("--method", default="integral_cl", choices=METHODS)
    p.add_argument("--K", type=float, default=10.0, help="feedback gain, K = K * I")
    p.add_argument("--Gamma", type=float, default=1.0, help="adaptation gain, Gamma = Gamma * I")
    p.add_argument("--k-cl", type=float, default=0.1)
    p.add_argument("--delta-t", type=float, default=0.5, help="integration window [s]")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--step-h", type=float, default=0.0004)
    p.add_argument("--duration", type=float, default=100.0)
    p.add_argument("--x0", type=_floats, default=None)
    p.add_argument("--theta-hat0", type=_floats, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-bar", type=float, default=1e-4)
    p.add_argument("--stack-size", type=int, default=20)
    p.add_argument("--filter-window", type=float, default=None)
    p.add_argument("--decimation", type=int, default=25)
    p.add_argument("--zero-order-hold", action="store_true")
    p.add_argument("--output", help="write the logged series to this CSV file")
    p.add_argument("--record-log", help="write the lambda_min / stack size log to this CSV file")


def _add_mc(sub):
    p = sub.add_parser("monte-carlo", help="paired integral/derivative Monte Carlo")
    p.add_argument("--config", help="key = value config file (a manifest.txt also works)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    p.add_argument("--trials", type=int)
    p.add_argument("--full", action="store_true", help="run the full 200-trial experiment")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./mc_out)")


def cmd_trial(args) -> int:
    model, _ = lookup_model(args.model)
    gains = Gains.scaled_identity(model.n, model.m, args.K, args.Gamma, args.k_cl)
    cfg = TrialConfig(gains, method=args.method, model=args.model, delta_t=args.delta_t,
                      noise_sigma=args.noise_sigma, step_h=args.step_h, duration=args.duration,
                      x0=args.x0, theta_hat0=args.theta_hat0, seed=args.seed,
                      lambda_bar=args.lambda_bar, stack_size=args.stack_size,
                      filter_window=args.filter_window, decimation=args.decimation,
                      zero_order_hold=args.zero_order_hold)
    res = run_trial(cfg)
    if args.output:
        res.to_csv(args.output)
    if args.record_log:
        res.record_log_csv(args.record_log)
    print(f"method      {cfg.method}")
    print(f"diverged    {res.diverged}" + (f" at t={res.diverged_time:.4f}" if res.diverged else ""))
    print(f"T_excite    {res.T_excite}")
    print(f"|e(T)|      {np.linalg.norm(res.e[-1]):.6g}")
    print(f"|theta~(T)| {np.linalg.norm(res.theta_tilde[-1]):.6g}")
    if res.rms is not None:
        print("rms         " + " ".join(f"{v:.4f}" for v in res.rms))
    return 1 if res.diverged else 0


def cmd_mc(args) -> int:
    mc = McConfig(trials=50)
    if args.config:
        mc = load_config(args.config, mc)
    overrides = dict(s.split("=", 1) for s in args.set)
    mc = parse_overrides({k.strip(): v for k, v in overrides.items()}, mc)
    repl = {}
    if args.full:
        repl["trials"] = 200
    for key in ("trials", "seed", "workers", "noise_sigma"):
        if getattr(args, key) is not None:
            repl[key] = getattr(args, key)
    out = args.output_dir or mc.output_dir or os.environ.get(OUTPUT_ENV) or "mc_out"
    repl["output_dir"] = out
    mc = dataclasses.replace(mc, **repl)
    summary = run_monte_carlo(mc)
    names = [f"e{i + 1}" for i in range(summary.n)] + [f"theta{i + 1}" for i in range(summary.m)]
    print(f"{'':12s}" + "".join(f"{c:>10s}" for c in names) + "  diverged")
    for mth in PAIR:
        print(f"{LABELS[mth]:12s}" + "".join(f"{v:10.4f}" for v in summary.mean_rms[mth])
              + f"  {summary.diverged[mth]}/{mc.trials}")
    print(f"outputs written to {out}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks
    results = run_checks(duration=args.duration)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="intcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_trial(sub)
    _add_mc(sub)
    p = sub.add_parser("check", help="run the invariant checks on a short noiseless trial")
    p.add_argument("--duration", type=float, default=20.0)
    args = parser.parse_args(argv)
    handler = {"trial": cmd_trial, "monte-carlo": cmd_mc, "check": cmd_check}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
