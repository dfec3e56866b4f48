"""Command-line entry point: ``fedavg-drift <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 numerical failure (divergence or a
singular problem), 3 a bound-check property failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .algorithms import LOCAL_GD, LOCAL_SGD, RunConfig, fedavg_run, gd_run, minibatch_sgd_run
from .errors import NumericalError
from .experiments import (RECIPES, ExperimentSpec, fmt, read_config, read_csv, run_experiment,
                          spec_from_mapping, write_csv)
from .metrics import HeterogeneityReport, bias_curves, drift_at_optimum
from .objective import AdditiveGaussian, Minibatch, load_problem, save_problem
from .plotting import KINDS, emit_plotdata
from .synthgen import SynthConfig, generate
from .theory import domination, iterate_bias_bound, thm2_bound, variance_bound

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _write_rows(out, columns, rows) -> None:
    if out:
        write_csv(Path(out), columns, rows)
    else:
        print(",".join(columns))
        for row in rows:
            print(",".join(fmt(v) for v in row))


def _start_point(spec: str, problem):
    if spec == "zero":
        return np.zeros(problem.dim)
    if spec == "optimum":
        return problem.w_opt.copy()
    w = np.loadtxt(spec, dtype=float).reshape(-1)
    if w.shape != (problem.dim,):
        raise UsageError(f"{spec}: expected {problem.dim} entries, got {w.size}")
    return w


def cmd_generate(args) -> int:
    config = SynthConfig(d=args.d, M=args.M, n=args.n, nu_max=args.nu_max,
                         eps_var=args.eps_var, seed=args.seed)
    problem = generate(config, workers=args.workers)
    out = Path(args.out)
    save_problem(problem, out, include_samples=not args.no_samples)
    meta = {"generator": "synthetic-linear-regression", "config": config.to_dict(),
            "seed": config.seed, "L": problem.L, "mu": problem.mu}
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _noise(args):
    if args.batch_size is not None:
        return Minibatch(args.batch_size)
    return AdditiveGaussian(args.sigma ** 2)


def cmd_run(args) -> int:
    problem = load_problem(args.problem)
    w0 = _start_point(args.start, problem)
    eta = args.eta if args.eta is not None else 1.0 / problem.L
    noise = _noise(args)
    if args.algorithm == "fedavg":
        cfg = RunConfig(args.alpha, eta, args.local_steps, args.rounds, args.mode, args.sample,
                        noise, args.seed)
        rec = fedavg_run(problem, cfg, w0)
    elif args.algorithm == "gd":
        rec = gd_run(problem, eta, args.rounds, w0)
    else:
        rec = minibatch_sgd_run(problem, eta, args.rounds, w0, noise,
                                rngmod.stream(args.seed, rngmod.ALGORITHM, 2), H=args.local_steps)
    _write_rows(args.out, rec.COLUMNS, rec.rows())
    return EXIT_OK


def cmd_metrics(args) -> int:
    problem = load_problem(args.problem)
    eta = args.eta if args.eta is not None else 1.0 / problem.L
    w = _start_point(args.eval_point, problem) if args.eval_point != "optimum" else problem.w_opt
    report = bias_curves(problem, w, eta, args.H_list, args.beta, args.gamma)
    _write_rows(args.out, HeterogeneityReport.COLUMNS, report.rows())
    return EXIT_OK


def cmd_bounds(args) -> int:
    columns, rows = read_csv(args.record)
    if not rows or "dist_sq" not in columns:
        raise UsageError(f"{args.record}: expected a run CSV with a dist_sq column")
    dist = np.array([float(r["dist_sq"]) for r in rows])
    problem = load_problem(args.problem) if args.problem else None
    mu = args.mu if args.mu is not None else (problem.mu if problem else None)
    L = args.L if args.L is not None else (problem.L if problem else None)
    M = args.M if args.M is not None else (problem.M if problem else None)
    if mu is None or L is None or M is None:
        raise UsageError("give --problem or all of --mu, --L, --M")
    if args.rho is not None:
        rho = args.rho
    elif problem is not None:
        rho = drift_at_optimum(problem, args.eta, args.local_steps)
    else:
        raise UsageError("give --problem or --rho")
    sigma_sq = args.sigma ** 2
    try:
        trace = thm2_bound(args.alpha, args.eta, args.local_steps, mu, len(dist) - 1, dist[0],
                           variance_bound(sigma_sq, M, args.local_steps),
                           iterate_bias_bound(args.eta, L, sigma_sq, args.local_steps), rho, L)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ok = domination(dist, trace.values)
    out_rows = [(t, dist[t], trace.values[t], bool(ok[t])) for t in range(len(dist))]
    _write_rows(args.out, ("round", "dist_sq", "bound", "pass"), out_rows)
    failed = int((~ok).sum())
    status = "PASS" if failed == 0 else "FAIL"
    print(f"{status}: {len(dist) - failed}/{len(dist)} rounds within the bound "
          f"(floor {trace.floor:.6g})", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_PROPERTY


_SPEC_KEYS = [f.name for f in fields(ExperimentSpec) if f.name not in ("name", "problem")]
_PROBLEM_KEYS = ["d", "M", "n", "nu_max", "eps_var"]


def cmd_sweep(args) -> int:
    values = read_config(args.config) if args.config else {}
    values["name"] = args.recipe
    for key in _SPEC_KEYS + _PROBLEM_KEYS:
        raw = getattr(args, "opt_" + key)
        if raw is not None:
            values[key] = raw
    try:
        spec = spec_from_mapping(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary = run_experiment(spec)
    print(json.dumps({k: summary[k] for k in ("recipe", "passed") if k in summary}))
    if spec.name == "bound-check" and not summary["passed"]:
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        out = emit_plotdata(args.csv, args.kind, args.out)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedavg-drift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="draw a synthetic federated regression problem")
    p.add_argument("--d", type=int, default=30)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--nu-max", type=float, default=5.0)
    p.add_argument("--eps-var", type=float, default=0.09)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-samples", action="store_true", help="omit raw samples from the file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run FedAvg or a baseline on a problem file")
    p.add_argument("--problem", required=True)
    p.add_argument("--algorithm", choices=("fedavg", "gd", "minibatch-sgd"), default="fedavg")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--eta", type=float, help="local learning rate (default 1/L)")
    p.add_argument("--local-steps", type=int, default=1)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--mode", choices=(LOCAL_GD, LOCAL_SGD), default=LOCAL_GD)
    p.add_argument("--sample", type=int, help="clients per round (default: all)")
    p.add_argument("--sigma", type=float, default=0.0, help="additive noise std (total)")
    p.add_argument("--batch-size", type=int, help="use minibatch noise instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", default="zero", help="zero | optimum | path to a vector file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", help="gradient-bias curves and drift at optimum")
    p.add_argument("--problem", required=True)
    p.add_argument("--eta", type=float, help="default 1/L")
    p.add_argument("--H-list", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64])
    p.add_argument("--eval-point", default="optimum", help="optimum | zero | vector file")
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bounds", help="check a run CSV against the four-term bound")
    p.add_argument("--record", required=True)
    p.add_argument("--problem")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--local-steps", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--mu", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="run a named experiment recipe")
    p.add_argument("recipe", choices=RECIPES)
    p.add_argument("--config", help="flat key = value file; CLI flags override it")
    for key in _SPEC_KEYS + _PROBLEM_KEYS:
        p.add_argument("--" + key.replace("_", "-"), dest="opt_" + key, metavar="VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="turn a recipe CSV into an SVG chart or gnuplot data")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", choices=KINDS, default="svg")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ValueError, FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
