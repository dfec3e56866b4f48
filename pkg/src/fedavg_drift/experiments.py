"""Named experiment recipes, their configuration, and result files.

Every recipe runs once per seed, writes ``<recipe>_seed<k>.csv`` for each
seed, ``<recipe>_aggregate.csv`` with the mean and standard deviation over
seeds, and ``<recipe>_summary.json``. Seeds may run on worker threads, but
results are collected and written in seed order, so output bytes do not depend
on the worker count.
"""

from __future__ import annotations

import configparser
import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import rng as rngmod
from .algorithms import LOCAL_GD, LOCAL_SGD, RunConfig, fedavg_run, gd_run, minibatch_sgd_run
from .metrics import HeterogeneityReport, bias_curves, drift_at_optimum, drift_scaling_experiment
from .objective import AdditiveGaussian, FederatedProblem, load_problem
from .synthgen import SynthConfig, generate
from .theory import iterate_bias_bound, thm2_bound, variance_bound

RECIPES = ("drift-vs-H", "dissimilarity-sweep", "convergence-compare", "scaling-nM",
           "bound-check")
OUTPUT_ENV = "FEDAVG_DRIFT_OUTPUT"
SCALING_SLOPE_RANGE = (-0.65, -0.35)


@dataclass
class ExperimentSpec:
    name: str
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = field(default_factory=lambda: Path(os.environ.get(OUTPUT_ENV, "results")))
    workers: int = 1
    # problem source: a synthetic config (its seed is replaced per run) or a file
    problem: SynthConfig = field(default_factory=SynthConfig)
    problem_file: str | None = None
    # metric parameters; eta None means 1/L of the problem at hand
    eta: float | None = None
    H_list: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64, 128])
    eval_point: str = "optimum"
    beta: float | None = None
    gamma: float | None = None
    # algorithm parameters
    alpha: float | None = None
    H: int = 10
    T: int = 100
    sigma_sq: float = 0.0
    sample: int | None = None
    # recipe-specific grids
    eps_vars: list[float] = field(default_factory=lambda: [0.01, 0.09, 0.81, 7.29])
    grid_n: list[int] = field(default_factory=lambda: [25, 100, 400])
    grid_M: list[int] = field(default_factory=lambda: [25, 100, 400])
    scaling_d: int = 10
    scaling_eta: float = 0.01
    scaling_H: int = 10

    def validate(self) -> None:
        if self.name not in RECIPES:
            raise ValueError(f"unknown recipe {self.name!r}; expected one of {RECIPES}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# -- config parsing ------------------------------------------------------------

_LIST_INT = {"seeds", "H_list", "grid_n", "grid_M"}
_LIST_FLOAT = {"eps_vars"}
_PROBLEM_KEYS = {"d", "M", "n", "nu_max", "eps_var"}


def _parse_value(key: str, raw: str, current):
    raw = raw.strip()
    if key in _LIST_INT:
        return [int(v) for v in raw.replace(",", " ").split()]
    if key in _LIST_FLOAT:
        return [float(v) for v in raw.replace(",", " ").split()]
    if raw.lower() in ("none", ""):
        return None
    if key == "output_dir":
        return Path(raw)
    if key in ("name", "eval_point", "problem_file"):
        return raw
    if key == "sample":
        return int(raw)
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    return float(raw)


def spec_from_mapping(values: dict[str, str]) -> ExperimentSpec:
    """Build a spec from flat string key/values (config file and CLI share this)."""
    if "name" not in values:
        raise ValueError("experiment name is required")
    spec = ExperimentSpec(name=values["name"])
    known = {f.name for f in fields(ExperimentSpec)}
    problem_kw = {}
    for key, raw in values.items():
        if key == "name":
            continue
        if key in _PROBLEM_KEYS:
            current = getattr(spec.problem, key)
            problem_kw[key] = int(raw) if isinstance(current, int) else float(raw)
        elif key in known:
            setattr(spec, key, _parse_value(key, raw, getattr(spec, key)))
        else:
            raise ValueError(f"unknown experiment key {key!r}")
    if problem_kw:
        spec.problem = replace(spec.problem, **problem_kw)
    spec.validate()
    return spec


def read_config(path) -> dict[str, str]:
    """Read a flat ``key = value`` file (an optional ``[experiment]`` header is allowed)."""
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    return dict(parser["experiment"])


# -- CSV helpers ---------------------------------------------------------------


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def aggregate(per_seed: list[list[tuple]], columns: tuple, n_keys: int):
    """Mean and standard deviation (ddof=1 when possible) of value columns over seeds.

    The first ``n_keys`` columns identify a row; every seed must produce the
    same keys in the same order.
    """
    out_cols = list(columns[:n_keys])
    for c in columns[n_keys:]:
        out_cols += [f"{c}_mean", f"{c}_std"]
    out_rows = []
    for i, first in enumerate(per_seed[0]):
        stack = np.array([[float(v) for v in rows[i][n_keys:]] for rows in per_seed])
        ddof = 1 if len(per_seed) > 1 else 0
        row = list(first[:n_keys])
        for mean, std in zip(stack.mean(axis=0), stack.std(axis=0, ddof=ddof)):
            row += [mean, std]
        out_rows.append(tuple(row))
    return tuple(out_cols), out_rows


# -- recipes -------------------------------------------------------------------


@dataclass
class RecipeResult:
    columns: tuple
    n_keys: int
    per_seed: list[list[tuple]]
    summary: dict


def _problem_for(spec: ExperimentSpec, seed: int) -> FederatedProblem:
    if spec.problem_file:
        return load_problem(spec.problem_file)
    return generate(replace(spec.problem, seed=seed))


def _eval_point(spec: ExperimentSpec, problem: FederatedProblem) -> np.ndarray:
    if spec.eval_point == "optimum":
        return problem.w_opt
    if spec.eval_point == "zero":
        return np.zeros(problem.dim)
    w = np.loadtxt(spec.eval_point, dtype=float).reshape(-1)
    if w.shape != (problem.dim,):
        raise ValueError(f"evaluation point file has {w.size} entries, expected {problem.dim}")
    return w


def _map_seeds(spec: ExperimentSpec, fn: Callable[[int], object]) -> list:
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            return list(pool.map(fn, spec.seeds))
    return [fn(s) for s in spec.seeds]


def _jensen_summary(per_seed, sm_col, ms_col):
    ratios = [r[ms_col] / r[sm_col] for rows in per_seed for r in rows if r[sm_col] > 0]
    ordered = all(r[sm_col] <= r[ms_col] * (1 + 1e-12) + 1e-300 for rows in per_seed for r in rows)
    return {"jensen_ordering": ordered,
            "min_mean_square_over_squared_mean": min(ratios) if ratios else None}


def _drift_vs_h(spec: ExperimentSpec) -> RecipeResult:
    def one(seed):
        problem = _problem_for(spec, seed)
        eta = spec.eta if spec.eta is not None else 1.0 / problem.L
        report = bias_curves(problem, _eval_point(spec, problem), eta, spec.H_list,
                             spec.beta, spec.gamma)
        return report.rows()

    per_seed = _map_seeds(spec, one)
    summary = _jensen_summary(per_seed, 1, 2)
    summary["passed"] = summary["jensen_ordering"]
    return RecipeResult(HeterogeneityReport.COLUMNS, 1, per_seed, summary)


def _dissimilarity_sweep(spec: ExperimentSpec) -> RecipeResult:
    if spec.problem_file:
        raise ValueError("dissimilarity-sweep regenerates problems and cannot use a problem file")

    def one(seed):
        rows = []
        for eps_var in spec.eps_vars:
            problem = generate(replace(spec.problem, seed=seed, eps_var=eps_var))
            eta = spec.eta if spec.eta is not None else 1.0 / problem.L
            rep = bias_curves(problem, problem.w_opt, eta, spec.H_list, spec.beta, spec.gamma)
            rows += [(eps_var,) + r for r in rep.rows()]
        return rows

    per_seed = _map_seeds(spec, one)
    summary = _jensen_summary(per_seed, 2, 3)
    summary["passed"] = summary["jensen_ordering"]
    return RecipeResult(("eps_var",) + HeterogeneityReport.COLUMNS, 2, per_seed, summary)


def _convergence_compare(spec: ExperimentSpec) -> RecipeResult:
    def one(seed):
        problem = _problem_for(spec, seed)
        eta = spec.eta if spec.eta is not None else 1.0 / problem.L
        alpha = spec.alpha if spec.alpha is not None else 1.0
        w0 = np.zeros(problem.dim)
        noise = AdditiveGaussian(spec.sigma_sq)
        records = [
            ("local-gd", fedavg_run(problem, RunConfig(alpha, eta, spec.H, spec.T, LOCAL_GD,
                                                       spec.sample, seed=seed), w0)),
            ("gd", gd_run(problem, eta, spec.T, w0)),
        ]
        if spec.sigma_sq > 0:
            records.append(("local-sgd", fedavg_run(
                problem, RunConfig(alpha, eta, spec.H, spec.T, LOCAL_SGD, spec.sample, noise,
                                   seed), w0)))
            records.append(("minibatch-sgd", minibatch_sgd_run(
                problem, eta, spec.T, w0, noise,
                rngmod.stream(seed, rngmod.HARNESS, 0), H=spec.H)))
        return [(name, t, rec.dist_sq[t], rec.loss_gap[t])
                for name, rec in records for t in range(spec.T + 1)]

    per_seed = _map_seeds(spec, one)
    finals = {}
    for rows in per_seed:
        for name, t, dist, _ in rows:
            if t == spec.T:
                finals.setdefault(name, []).append(dist)
    summary = {"final_dist_sq_mean": {k: float(np.mean(v)) for k, v in finals.items()},
               "passed": True}
    return RecipeResult(("algorithm", "round", "dist_sq", "loss_gap"), 2, per_seed, summary)


def _scaling(spec: ExperimentSpec) -> RecipeResult:
    grid = [(n, M) for n in spec.grid_n for M in spec.grid_M]
    res = drift_scaling_experiment(grid, spec.seeds, eta=spec.scaling_eta, H=spec.scaling_H,
                                   d=spec.scaling_d, nu_max=spec.problem.nu_max,
                                   eps_var=spec.problem.eps_var, workers=spec.workers)
    per_seed = [
        [(r["n"], r["M"], r["rho"], r["zeta_sq"]) for r in res.per_seed if r["seed"] == s]
        for s in spec.seeds
    ]
    lo, hi = SCALING_SLOPE_RANGE
    summary = {
        "slope_rho_vs_nM": res.slope_rho_vs_nM,
        "slope_zeta_sq_vs_n": {str(k): v for k, v in res.slope_zeta_sq_vs_n.items()},
        "slope_range": [lo, hi],
        "passed": lo <= res.slope_rho_vs_nM <= hi,
    }
    return RecipeResult(("n", "M", "rho", "zeta_sq"), 2, per_seed, summary)


def bound_check_params(problem: FederatedProblem, spec: ExperimentSpec) -> dict:
    """Step sizes and bound ingredients used by the bound-check recipe."""
    H = spec.H
    eta = spec.eta if spec.eta is not None else 0.5 * min(1.0 / problem.L,
                                                          1.0 / (problem.mu * H))
    alpha = spec.alpha if spec.alpha is not None else 0.125
    return {
        "alpha": alpha, "eta": eta, "H": H,
        "rho": drift_at_optimum(problem, eta, H),
        "var_max": variance_bound(spec.sigma_sq, problem.M, H),
        # Quadratic clients have no iterate bias; the general bound is still the stand-in.
        "delta_sq_max": iterate_bias_bound(eta, problem.L, spec.sigma_sq, H),
    }


def _bound_check(spec: ExperimentSpec) -> RecipeResult:
    # One fixed problem; seeds only drive the local-update noise.
    problem = (load_problem(spec.problem_file) if spec.problem_file
               else generate(spec.problem))
    prm = bound_check_params(problem, spec)
    w0 = np.zeros(problem.dim)
    trace = thm2_bound(prm["alpha"], prm["eta"], prm["H"], problem.mu, spec.T,
                       float(np.sum((w0 - problem.w_opt) ** 2)), prm["var_max"],
                       prm["delta_sq_max"], prm["rho"], problem.L)
    mode = LOCAL_SGD if spec.sigma_sq > 0 else LOCAL_GD

    def one(seed):
        cfg = RunConfig(prm["alpha"], prm["eta"], prm["H"], spec.T, mode, spec.sample,
                        AdditiveGaussian(spec.sigma_sq), seed)
        rec = fedavg_run(problem, cfg, w0)
        return [(t, rec.dist_sq[t], trace.values[t]) for t in range(spec.T + 1)]

    per_seed = _map_seeds(spec, one)
    dist = np.array([[r[1] for r in rows] for rows in per_seed])
    mean = dist.mean(axis=0)
    se = dist.std(axis=0, ddof=1) / np.sqrt(len(per_seed)) if len(per_seed) > 1 else 0 * mean
    ok = mean - 3 * se <= trace.values
    summary = {
        "passed": bool(ok.all()),
        "failing_rounds": [int(t) for t in np.flatnonzero(~ok)],
        "alpha": prm["alpha"], "eta": prm["eta"], "H": prm["H"], "rho": prm["rho"],
        "mu": problem.mu, "L": problem.L, "bound_floor": trace.floor,
    }
    return RecipeResult(("round", "dist_sq", "bound"), 1, per_seed, summary)


_RECIPE_FUNCS = {
    "drift-vs-H": _drift_vs_h,
    "dissimilarity-sweep": _dissimilarity_sweep,
    "convergence-compare": _convergence_compare,
    "scaling-nM": _scaling,
    "bound-check": _bound_check,
}


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute a recipe and write its result files; returns the summary."""
    spec.validate()
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    result = _RECIPE_FUNCS[spec.name](spec)
    files = []
    for seed, rows in zip(spec.seeds, result.per_seed):
        path = out / f"{spec.name}_seed{seed}.csv"
        write_csv(path, result.columns, rows)
        files.append(path.name)
    agg_cols, agg_rows = aggregate(result.per_seed, result.columns, result.n_keys)
    write_csv(out / f"{spec.name}_aggregate.csv", agg_cols, agg_rows)
    summary = {"recipe": spec.name, "seeds": list(spec.seeds), "files": files,
               "aggregate": f"{spec.name}_aggregate.csv", **result.summary}
    (out / f"{spec.name}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
