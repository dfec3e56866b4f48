"""Acceptance criteria 1-10.

Each criterion prints one ``[PASS]``/``[FAIL]`` line. Run directly with
``python3 tests/test_acceptance.py`` or through pytest.
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from fedavg_drift.algorithms import LOCAL_GD, RunConfig, fedavg_run, gd_run
from fedavg_drift.experiments import run_experiment, spec_from_mapping
from fedavg_drift.localupdate import averaged_pseudo_gradient, iterate_bias, local_endpoints
from fedavg_drift.metrics import (bias_curves, drift_at_optimum, drift_scaling_experiment,
                                  drift_via_Pc)
from fedavg_drift.objective import AdditiveGaussian, problem_from_arrays
from fedavg_drift.synthgen import SynthConfig, conditioned_problem, generate, random_quadratic
from fedavg_drift.theory import closed_form_localgd, iterate_bias_bound, thm2_bound, \
    tilde_constants, variance_bound


def _report(num, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}", flush=True)
    return ok


def criterion_1():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        p = generate(SynthConfig(d=30, M=100, n=100, eps_var=0.09, seed=seed))
        w0 = np.zeros(p.dim)
        for H in (1, 2, 5, 10):
            rec = fedavg_run(p, RunConfig(1.0, 0.01, H, 50, LOCAL_GD), w0)
            closed = closed_form_localgd(p, 0.01, H, 50, w0)
            worst = max(worst, float(np.linalg.norm(rec.models - closed, axis=1).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 60
    return _report(1, ok, f"max per-round distance discrepancy {worst:.3g} (< 1e-9), "
                          f"{elapsed:.1f}s (< 60s)")


def criterion_2():
    g = np.random.default_rng(2)
    worst = 0.0
    for i in range(100):
        d, M, H = int(g.integers(1, 11)), int(g.integers(1, 21)), int(g.integers(1, 33))
        p = random_quadratic(1000 + i, d=d, M=M)
        eta = float(g.uniform(0.05, 1.0)) / p.L
        a = drift_at_optimum(p, eta, H)
        b = drift_via_Pc(p, eta, H, check=False)
        worst = max(worst, abs(a - b))
    return _report(2, worst <= 1e-10, f"max |simulated - polynomial| {worst:.3g} (<= 1e-10)")


def criterion_3():
    base = random_quadratic(31, d=6, M=1)
    c = base.clients[0]
    identical = problem_from_arrays(np.stack([c.A] * 10), np.stack([c.b] * 10), c.w_ref)
    rho_a = drift_at_optimum(identical, 0.5 / identical.L, 16)
    common = random_quadratic(32, d=6, M=15, common_hessian=True, b_scale=3.0)
    rho_b = drift_at_optimum(common, 0.5 / common.L, 16)
    hetero = generate(SynthConfig(seed=3))
    rho_c = drift_at_optimum(hetero, 1.0 / hetero.L, 1)
    ok = max(rho_a, rho_b, rho_c) < 1e-12
    return _report(3, ok, f"rho identical={rho_a:.2g}, common Hessian={rho_b:.2g}, "
                          f"H=1={rho_c:.2g} (all < 1e-12)")


def criterion_4():
    t0 = time.perf_counter()
    grid = [(n, M) for n in (25, 100, 400) for M in (25, 100, 400)]
    res = drift_scaling_experiment(grid, seeds=list(range(10)), eta=0.01, H=10, d=10)
    elapsed = time.perf_counter() - t0
    slope = res.slope_rho_vs_nM
    ok = -0.65 <= slope <= -0.35 and elapsed < 300
    return _report(4, ok, f"log-log slope of mean rho vs nM = {slope:.3f} in [-0.65, -0.35], "
                          f"{elapsed:.1f}s (< 300s)")


def criterion_5():
    H_list = list(range(2, 65))
    min_ratio = np.inf
    sm64, ms64 = [], []
    for seed in range(10):
        p = generate(SynthConfig(seed=seed))
        rep = bias_curves(p, p.w_opt, 1.0 / p.L, H_list)
        sm, ms = np.array(rep.squared_mean_bias), np.array(rep.mean_square_bias)
        min_ratio = min(min_ratio, float(np.min(ms / sm)))
        sm64.append(sm[-1])
        ms64.append(ms[-1])
    frac = float(np.mean(sm64) / np.mean(ms64))
    ok = min_ratio >= 5 and frac < 1e-2
    return _report(5, ok, f"min mean_square/squared_mean over H=2..64 = {min_ratio:.3g} (>= 5); "
                          f"squared_mean/mean_square at H=64 = {frac:.3g} (< 1e-2)")


def criterion_6():
    kappa = 100.0
    p = conditioned_problem(6, kappa, d=10, M=20)
    assert p.kappa == pytest.approx(kappa) and all(not c.b.any() for c in p.clients)
    H = int(kappa)
    eta = min(1.0 / p.L, 1.0 / (p.mu * H))
    # Worst case for GD: the initial error lies along the smallest eigenvector of the
    # averaged Hessian, which is what the rounds-to-accuracy comparison is about.
    lam, V = np.linalg.eigh(p.A_bar)
    w0 = p.w_opt + V[:, 0]
    T = 64
    rec = fedavg_run(p, RunConfig(0.125, eta, H, T), w0)
    ratio = float(np.max(rec.dist_sq[1:] / rec.dist_sq[:-1]))
    target = rec.dist_sq[16]
    gd = gd_run(p, 1.0 / p.L, 5000, w0)
    reached = np.flatnonzero(gd.dist_sq <= target)
    rounds = int(reached[0]) if reached.size else 10 ** 9
    ok = ratio <= (1 - 1 / 16) * 1.05 and rounds >= kappa / 4
    return _report(6, ok, f"max per-round dist_sq ratio {ratio:.4f} (<= {0.9375 * 1.05:.4f}); "
                          f"GD needs {rounds} rounds for Local GD's 16-round level "
                          f"(>= {kappa / 4:g})")


def _thm2_domination(problem, seeds, T, H, sigma_sq):
    eta = 0.5 * min(1.0 / problem.L, 1.0 / (problem.mu * H))
    alpha = 0.125
    w0 = np.zeros(problem.dim)
    rho = drift_at_optimum(problem, eta, H)
    trace = thm2_bound(alpha, eta, H, problem.mu, T, float(np.sum((w0 - problem.w_opt) ** 2)),
                       variance_bound(sigma_sq, problem.M, H),
                       iterate_bias_bound(eta, problem.L, sigma_sq, H), rho, problem.L)
    dist = np.stack([
        fedavg_run(problem, RunConfig(alpha, eta, H, T, "local-sgd",
                                      noise=AdditiveGaussian(sigma_sq), seed=s), w0).dist_sq
        for s in seeds])
    mean = dist.mean(axis=0)
    se = dist.std(axis=0, ddof=1) / np.sqrt(len(seeds))
    ok = bool(np.all(mean - 3 * se <= trace.values))
    tightest = float(np.max(mean / trace.values))
    return ok, tightest, trace.floor


def criterion_7():
    t0 = time.perf_counter()
    seeds = list(range(20))
    ok_a, tight_a, _ = _thm2_domination(generate(SynthConfig(seed=0)), seeds, 200, 10, 1.0)
    # A well-conditioned heterogeneous problem where the bound is not vacuous.
    q = random_quadratic(77, d=10, M=20, eig_range=(1.0, 4.0))
    ok_b, tight_b, floor_b = _thm2_domination(q, seeds, 400, 4, 1.0)
    elapsed = time.perf_counter() - t0
    ok = ok_a and ok_b and elapsed < 300
    return _report(7, ok, f"mean dist_sq within bound at every round (max measured/bound "
                          f"{tight_a:.3g} on the default synthetic problem, {tight_b:.3g} on a well-conditioned problem, "
                          f"floor {floor_b:.3g}), {elapsed:.1f}s (< 300s)")


def criterion_8():
    reps, sigma_sq, H = 10_000, 1.0, 5
    p = generate(SynthConfig(d=5, M=10, n=20, seed=8))
    eta = 0.5 / p.L
    w = np.zeros(p.dim)
    rng = np.random.default_rng(8)
    noise = AdditiveGaussian(sigma_sq)
    G = np.empty((reps, p.dim))
    for r in range(reps):
        W = local_endpoints(p, w, eta, H, noise=noise, rng=rng)
        G[r] = p.weights @ ((w - W) / (eta * H))
    dev = np.sum((G - G.mean(axis=0)) ** 2, axis=1) * reps / (reps - 1)
    var, var_se = float(dev.mean()), float(dev.std(ddof=1) / np.sqrt(reps))
    var_ok = var <= variance_bound(sigma_sq, p.M, H) + 3 * var_se

    ests = [iterate_bias(p, c, w, eta, H, reps, rng, noise) for c in range(p.M)]
    delta_sq = float(p.weights @ [e.sq_norm for e in ests])
    delta_se = float(np.sqrt(np.sum((p.weights * [e.sq_norm_se for e in ests]) ** 2)))
    bias_ok = delta_sq <= iterate_bias_bound(eta, p.L, sigma_sq, H) + 3 * delta_se
    # quadratic clients: delta is zero up to Monte-Carlo error
    z = max(float(np.max(np.abs(e.delta) / e.stderr)) for e in ests)
    zero_ok = z <= 4.0
    ok = var_ok and bias_ok and zero_ok
    return _report(8, ok, f"Var[G] {var:.3g} <= {variance_bound(sigma_sq, p.M, H):.3g} + 3SE; "
                          f"E||delta||^2 {delta_sq:.3g} <= "
                          f"{iterate_bias_bound(eta, p.L, sigma_sq, H):.3g} + 3SE; "
                          f"max |delta|/SE = {z:.2f} (<= 4)")


def criterion_9():
    g = np.random.default_rng(9)
    worst = 0.0
    for i in range(10):
        p = random_quadratic(900 + i, d=int(g.integers(2, 8)), M=int(g.integers(2, 12)))
        eta = float(g.uniform(0.1, 1.0)) / p.L
        H = int(g.integers(1, 25))
        mu_t, L_t = tilde_constants(eta, p.mu, H)
        for _ in range(100):
            w, u = g.normal(0, 3, p.dim), g.normal(0, 3, p.dim)
            dG = averaged_pseudo_gradient(p, w, eta, H) - averaged_pseudo_gradient(p, u, eta, H)
            inner, dist = float(dG @ (w - u)), float((w - u) @ (w - u))
            # relative violations; <= 0 means the inequality holds
            worst = max(worst, (mu_t * dist - inner) / inner, (inner - L_t * dist) / inner,
                        (dG @ dG / L_t - inner) / inner)
    ineq_ok = worst <= 1e-9
    grid_ok = True
    for _ in range(100):
        eta = 10 ** g.uniform(-3, 0)
        H = int(g.integers(1, 65))
        mu = g.uniform(1e-3, 1.0) / (eta * H)
        mu_t, _ = tilde_constants(eta, mu, H)
        grid_ok &= bool(mu / 2 <= mu_t <= mu * (1 + 1e-12))
    ok = ineq_ok and grid_ok
    return _report(9, ok, f"worst relative violation {worst:.2g} (<= 1e-9) over 1000 pairs; "
                          f"mu/2 <= mu_tilde <= mu on 100 grid points: {grid_ok}")


RECIPE_SETTINGS = {
    "drift-vs-H": {"H_list": "1 2 4 8 16"},
    "dissimilarity-sweep": {"H_list": "1 4 16", "eps_vars": "0.01 0.81"},
    "convergence-compare": {"T": "30", "sigma_sq": "0.5", "sample": "5"},
    "scaling-nM": {"grid_n": "25 100", "grid_M": "10 40"},
    "bound-check": {"T": "60", "sigma_sq": "1.0"},
}


def criterion_10():
    base = {"d": "6", "M": "12", "n": "25", "seeds": "0 1 2 3"}
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, extra in RECIPE_SETTINGS.items():
            dirs = []
            for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
                out = Path(tmp) / f"{name}_{tag}"
                run_experiment(spec_from_mapping({**base, **extra, "name": name,
                                                  "output_dir": str(out),
                                                  "workers": str(workers)}))
                dirs.append(out)
            files = sorted(f.name for f in dirs[0].iterdir())
            for f in files:
                ref = (dirs[0] / f).read_bytes()
                if any((d / f).read_bytes() != ref for d in dirs[1:]):
                    mismatches.append(f)
    ok = not mismatches
    return _report(10, ok, f"{len(RECIPE_SETTINGS)} recipes byte-identical on rerun and with "
                           f"4 workers (mismatches: {mismatches or 'none'})")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion, capsys):
    # Show the PASS/FAIL line even though pytest captures output.
    with capsys.disabled():
        print()
        ok = criterion()
    assert ok


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
