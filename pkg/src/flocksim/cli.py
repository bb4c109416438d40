"""Command line entry point: ``flocksim <kind>`` experiments plus gen / run / oracle helpers."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import experiments as ex
from . import oracle, scenarios
from .model import load_instance, save_instance, social_cost
from .protocol import ProtocolConfig, run
from .regularize import RegFn


def _values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                out.append(tok)
    return tuple(out)


def _experiment_parser(sub, kind):
    p = sub.add_parser(kind, help=f"run the {kind} experiment")
    p.add_argument("--config", help="JSON experiment config (defaults to the built-in one)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default=f"results/{kind}", help="output directory for the CSVs")
    p.add_argument("--sweep", help="comma-separated sweep values")
    p.add_argument("--trials", type=int, help="fixed trial count per point (no CI stopping)")
    p.add_argument("--budget", type=int, help="trial budget per point")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--fixture", choices=ex.FIXTURES, help="use a built-in instance for all trials")
    p.add_argument("--emit-instance", nargs=2, metavar=("POINT:TRIAL", "PATH"),
                   help="write one trial's instance as JSON and exit")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    p.set_defaults(func=_cmd_experiment, kind=kind)


def _effective_config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.default_config(args.kind)
    if cfg.kind != args.kind:
        raise SystemExit(f"config is for {cfg.kind!r}, not {args.kind!r}")
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.sweep:
        changes["sweep_values"] = _values(args.sweep)
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.budget is not None:
        changes["trial_budget"] = args.budget
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.fixture is not None:
        changes["fixture"] = args.fixture
    return replace(cfg, **changes) if changes else cfg


def _cmd_experiment(args) -> int:
    cfg = _effective_config(args)
    if args.dump_config:
        json.dump(ex.config_to_dict(cfg), sys.stdout, indent=2)
        print()
        return 0
    if args.emit_instance:
        where, path = args.emit_instance
        point, trial = (int(v) for v in where.split(":"))
        inst, start, seed = ex.trial_instance(cfg, point, trial)
        save_instance(inst, path)
        print(f"instance seed {seed}, initial outcome {list(start)}")
        return 0

    def progress(value, summary, exhausted):
        tail = " (trial budget exhausted)" if exhausted else ""
        if summary is None:
            print(f"{cfg.sweep_variable}={value}: 1 trial{tail}", file=sys.stderr)
        else:
            print(f"{cfg.sweep_variable}={value}: n={summary.n} mean={summary.mean:.6g} "
                  f"+/- {summary.half_width:.3g}{tail}", file=sys.stderr)

    report = ex.run_experiment(cfg, progress)
    report.write_csv(args.out)
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    return 1 if report.violations else 0


def _cmd_gen(args) -> int:
    params = scenarios.GenParams(m=args.m, n=args.n, p=args.p, mean_degree=args.mean_degree,
                                 delta=args.delta, seed=args.seed)
    make = {"random": scenarios.gen_random_instance, "balance": scenarios.preset_load_balancing,
            "energy": scenarios.preset_energy}[args.preset]
    save_instance(make(params), args.out)
    return 0


def _protocol(args) -> ProtocolConfig:
    return ProtocolConfig(eta=args.eta, reg=RegFn(args.a), max_rounds=args.max_rounds)


def _cmd_run(args) -> int:
    inst = load_instance(args.instance)
    rng = np.random.default_rng(args.seed)
    start = (tuple(int(v) for v in args.initial.split(",")) if args.initial
             else scenarios.initial_assignment(inst, rng))
    trace = run(inst, start, _protocol(args), rng)
    trace.write_csv(args.trace)
    print(f"{trace.status} after {trace.num_rounds} rounds, {len(trace.migrations)} migrations, "
          f"cost {trace.initial_cost:.6g} -> {trace.final_cost:.6g}", file=sys.stderr)
    return 0


def _cmd_oracle(args) -> int:
    cfg = _protocol(args)
    bad = 0
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "optimum_cost", "ne_cost", "poa"])
        for k, path in enumerate(args.instances):
            inst = load_instance(path)
            rng = np.random.default_rng([args.seed, k])
            trace = run(inst, scenarios.initial_assignment(inst, rng), cfg, rng)
            opt = oracle.brute_force_optimum(inst, cfg.reg, args.budget)
            poa = oracle.price_of_anarchy(inst, trace.final, cfg.reg, optimum=opt)
            if poa < 1 - 1e-9:
                bad += 1
            name = inst.name or os.path.splitext(os.path.basename(path))[0]
            w.writerow([name, repr(opt.best_cost), repr(social_cost(inst, trace.final, cfg.reg)),
                        repr(poa)])
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flocksim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ex.KINDS:
        _experiment_parser(sub, kind)

    g = sub.add_parser("gen", help="generate an instance JSON file")
    g.add_argument("--preset", choices=("random", "balance", "energy"), default="random")
    g.add_argument("-m", type=int, required=True)
    g.add_argument("-n", type=int, required=True)
    g.add_argument("--p", type=float, default=0.5)
    g.add_argument("--mean-degree", type=float)
    g.add_argument("--delta", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    for name, helptext in (("run", "run Flock on one instance and write its trace"),
                           ("oracle", "compare equilibria with the brute-force optimum")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--eta", type=float, default=0.9)
        p.add_argument("--a", type=float, default=9.0)
        p.add_argument("--max-rounds", type=int)
        p.add_argument("--seed", type=int, default=0)
        if name == "run":
            p.add_argument("instance")
            p.add_argument("--initial", help="comma-separated starting clouds")
            p.add_argument("--trace", default="trace.csv")
            p.set_defaults(func=_cmd_run)
        else:
            p.add_argument("instances", nargs="+")
            p.add_argument("--budget", type=int, default=oracle.DEFAULT_BUDGET)
            p.add_argument("--out", default="oracle.csv")
            p.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
