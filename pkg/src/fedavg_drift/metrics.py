"""Heterogeneity measures: gradient dissimilarity, gradient-bias curves and
the average drift at the optimum.

Throughout, "at the optimum" means the exact finite-sample minimizer
``problem.w_opt``, not the generating model ``w_ref``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .localupdate import local_endpoints
from .objective import FederatedProblem, _check_vector, global_gradient
from .synthgen import SynthConfig, generate


def gradient_dissimilarity(problem: FederatedProblem, w) -> float:
    """E_c ||grad F_c(w) - grad F(w)||^2 evaluated at the single point ``w``."""
    w = _check_vector(w, problem.dim)
    G = problem.client_gradients(w)
    dev = G - problem.weights @ G
    return float(problem.weights @ np.einsum("mi,mi->m", dev, dev))


def gd_operator_powers(A: np.ndarray, eta: float, H: int) -> np.ndarray:
    """Stack of (I - eta A)^h for h = 0..H, by repeated multiplication."""
    d = A.shape[-1]
    step = np.eye(d) - eta * A
    out = np.empty((H + 1, d, d))
    out[0] = np.eye(d)
    for h in range(1, H + 1):
        out[h] = out[h - 1] @ step
    return out


def gd_operator_power_eigh(A: np.ndarray, eta: float, h: int) -> np.ndarray:
    """(I - eta A)^h through the symmetric eigendecomposition (cross-check path)."""
    lam, V = np.linalg.eigh(A)
    return (V * (1.0 - eta * lam) ** h) @ V.T


def drift_polynomial(A: np.ndarray, eta: float, H: int) -> np.ndarray:
    """P = (1/H) sum_{h<H} [I - (I - eta A)^h] for one quadratic client."""
    powers = gd_operator_powers(A, eta, H - 1) if H > 1 else np.eye(A.shape[0])[None]
    d = A.shape[0]
    return np.eye(d) - powers[:H].sum(axis=0) / H


def drift_at_optimum(problem: FederatedProblem, eta: float, H: int) -> float:
    """rho = || E_c[G_c(w_opt)] || with G_c from simulated local GD."""
    w = problem.w_opt
    W = local_endpoints(problem, w, eta, H)
    G = problem.weights @ ((w - W) / (eta * H))
    return float(np.linalg.norm(G))


def drift_vector_via_polynomials(problem: FederatedProblem, eta: float, H: int) -> np.ndarray:
    grads = problem.client_gradients(problem.w_opt)
    out = np.zeros(problem.dim)
    for p, A, g in zip(problem.weights, problem.A_stack, grads):
        out += p * (drift_polynomial(A, eta, H) @ g)
    return out


def drift_via_Pc(problem: FederatedProblem, eta: float, H: int, check: bool = True) -> float:
    """rho = || E_c[P_c grad F_c(w_opt)] ||, asserted equal to the simulated value."""
    rho = float(np.linalg.norm(drift_vector_via_polynomials(problem, eta, H)))
    if check:
        simulated = drift_at_optimum(problem, eta, H)
        assert abs(rho - simulated) <= 1e-10, (
            f"polynomial and simulated drift disagree: {rho!r} vs {simulated!r}")
    return rho


def dissimilarity_bound_curve(L: float, eta: float, H: int, zeta_sq: float,
                              grad_norm_sq: float, beta: float, gamma: float) -> float:
    """beta ||grad F||^2 + gamma eta^2 L^2 H^2 zeta^2 (the dissimilarity-based bias bound)."""
    return beta * grad_norm_sq + gamma * eta ** 2 * L ** 2 * H ** 2 * zeta_sq


@dataclass
class HeterogeneityReport:
    H_values: list[int]
    eta: float
    grad_dissimilarity: float
    squared_mean_bias: list[float]
    mean_square_bias: list[float]
    drift_at_optimum: list[float]
    quadratic_bound: list[float]
    eval_point: np.ndarray = field(repr=False)

    COLUMNS = ("H", "squared_mean_bias", "mean_square_bias", "drift", "dissimilarity",
               "eq11_bound")

    def rows(self) -> list[tuple]:
        return [
            (H, sm, ms, rho, self.grad_dissimilarity, qb)
            for H, sm, ms, rho, qb in zip(self.H_values, self.squared_mean_bias,
                                          self.mean_square_bias, self.drift_at_optimum,
                                          self.quadratic_bound)
        ]


def _bias_stats(problem, w, eta, H_values):
    """Squared-mean and mean-square gradient bias at ``w`` for each H (one pass)."""
    wanted = set(H_values)
    g0 = problem.client_gradients(w)
    W = np.tile(w, (problem.M, 1))
    grad_sum = np.zeros_like(W)
    out = {}
    for h in range(1, max(H_values) + 1):
        G = np.einsum("mij,mj->mi", problem.A_stack, W - problem.w_ref_stack) - problem.b_stack
        grad_sum += G
        W = W - eta * G
        if h in wanted:
            B = g0 - grad_sum / h
            mean_B = problem.weights @ B
            out[h] = (float(mean_B @ mean_B),
                      float(problem.weights @ np.einsum("mi,mi->m", B, B)))
    return out


def bias_curves(problem: FederatedProblem, w, eta: float, H_list: Sequence[int],
                beta: float | None = None, gamma: float | None = None) -> HeterogeneityReport:
    """Gradient-bias curves over H at point ``w``.

    The dissimilarity-based bound column is only filled when the caller supplies
    ``beta`` and ``gamma``; otherwise it holds NaN.
    """
    H_values = [int(h) for h in H_list]
    if not H_values or min(H_values) < 1:
        raise ValueError("H_list must be a non-empty list of positive integers")
    w = _check_vector(w, problem.dim).copy()
    zeta_sq = gradient_dissimilarity(problem, w)
    at_w = _bias_stats(problem, w, eta, H_values)
    at_opt = _bias_stats(problem, problem.w_opt, eta, H_values)
    grad_sq = float(np.sum(global_gradient(problem, w) ** 2))
    bound = [
        dissimilarity_bound_curve(problem.L, eta, H, zeta_sq, grad_sq, beta, gamma)
        if beta is not None and gamma is not None else float("nan")
        for H in H_values
    ]
    return HeterogeneityReport(
        H_values=H_values,
        eta=float(eta),
        grad_dissimilarity=zeta_sq,
        squared_mean_bias=[at_w[H][0] for H in H_values],
        mean_square_bias=[at_w[H][1] for H in H_values],
        # E_c B_c(w_opt) = -G(w_opt) because the gradients average to zero there.
        drift_at_optimum=[float(np.sqrt(at_opt[H][0])) for H in H_values],
        quadratic_bound=bound,
        eval_point=w,
    )


@dataclass
class ScalingResult:
    rows: list[dict]                 # one per (n, M): means and stddevs over seeds
    slope_rho_vs_nM: float
    slope_zeta_sq_vs_n: dict[int, float]   # keyed by M
    per_seed: list[dict]

    COLUMNS = ("n", "M", "mean_rho", "std_rho", "mean_zeta_sq", "std_zeta_sq")


def _loglog_slope(x: Iterable[float], y: Iterable[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(list(x), float)),
                            np.log(np.asarray(list(y), float)), 1)[0])


def drift_scaling_experiment(grid: Sequence[tuple[int, int]], seeds: Sequence[int],
                             eta: float = 0.01, H: int = 10, d: int = 10,
                             nu_max: float = 5.0, eps_var: float = 0.09,
                             workers: int = 1) -> ScalingResult:
    """Mean drift and dissimilarity over seeds on a grid of (n, M) problem sizes."""
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    jobs = [(n, M, s) for n, M in grid for s in seeds]

    def one(job):
        n, M, s = job
        problem = generate(SynthConfig(d=d, M=M, n=n, nu_max=nu_max, eps_var=eps_var, seed=s))
        return {"n": n, "M": M, "seed": s,
                "rho": drift_at_optimum(problem, eta, H),
                "zeta_sq": gradient_dissimilarity(problem, problem.w_opt)}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_seed = list(pool.map(one, jobs))
    else:
        per_seed = [one(j) for j in jobs]

    rows = []
    for n, M in grid:
        rho = np.array([r["rho"] for r in per_seed if r["n"] == n and r["M"] == M])
        zeta = np.array([r["zeta_sq"] for r in per_seed if r["n"] == n and r["M"] == M])
        rows.append({"n": n, "M": M,
                     "mean_rho": float(rho.mean()), "std_rho": float(rho.std()),
                     "mean_zeta_sq": float(zeta.mean()), "std_zeta_sq": float(zeta.std())})
    slope_rho = _loglog_slope([r["n"] * r["M"] for r in rows], [r["mean_rho"] for r in rows])
    slopes_zeta = {}
    for M in sorted({r["M"] for r in rows}):
        sub = [r for r in rows if r["M"] == M]
        if len({r["n"] for r in sub}) > 1:
            slopes_zeta[M] = _loglog_slope([r["n"] for r in sub],
                                           [r["mean_zeta_sq"] for r in sub])
    return ScalingResult(rows, slope_rho, slopes_zeta, per_seed)
