"""FedAvg and its centralized baselines on a :class:`FederatedProblem`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DivergenceError
from .localupdate import local_endpoints
from .objective import AdditiveGaussian, FederatedProblem, NoiseModel, _check_vector, \
    global_gradient, stochastic_gradient

LOCAL_GD = "local-gd"
LOCAL_SGD = "local-sgd"
DIVERGENCE_FACTOR = 1e12


@dataclass
class RunConfig:
    alpha: float = 1.0
    eta: float = 0.01
    H: int = 1
    T: int = 100
    mode: str = LOCAL_GD
    sample: int | None = None      # K clients per round, uniform without replacement
    noise: NoiseModel = field(default_factory=lambda: AdditiveGaussian(0.0))
    seed: int = 0

    def validate(self, M: int) -> None:
        if not self.alpha > 0 or not self.eta > 0:
            raise ValueError("alpha and eta must be positive")
        if self.H < 1 or self.T < 1:
            raise ValueError("H and T must be >= 1")
        if self.mode not in (LOCAL_GD, LOCAL_SGD):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sample is not None and not 1 <= self.sample <= M:
            raise ValueError(f"sample size must be in [1, {M}], got {self.sample}")


@dataclass
class RunRecord:
    models: np.ndarray            # (T+1, d)
    dist_sq: np.ndarray           # ||w^(t) - w_opt||^2
    loss_gap: np.ndarray          # F(w^(t)) - F(w_opt)
    avg_pseudo_grad_norm: np.ndarray  # norm of the applied update direction; NaN at the last round
    label: str = ""

    COLUMNS = ("round", "dist_sq", "loss_gap", "pseudo_grad_norm")

    def rows(self) -> list[tuple]:
        return [(t, self.dist_sq[t], self.loss_gap[t], self.avg_pseudo_grad_norm[t])
                for t in range(len(self.dist_sq))]


class _Recorder:
    def __init__(self, problem: FederatedProblem, w0: np.ndarray, T: int):
        self.problem = problem
        self.models = np.empty((T + 1, problem.dim))
        self.dirs = np.full(T + 1, np.nan)
        self.t = 0
        self.models[0] = w0
        d0 = float(np.sum((w0 - problem.w_opt) ** 2))
        # Floor of 1 so runs started at the optimum are not flagged on round-off.
        self.limit = DIVERGENCE_FACTOR * max(d0, 1.0)

    def push(self, w: np.ndarray, direction: np.ndarray) -> None:
        self.dirs[self.t] = np.linalg.norm(direction)
        self.t += 1
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"non-finite global model at round {self.t}", self.t)
        if np.sum((w - self.problem.w_opt) ** 2) > self.limit:
            raise DivergenceError(f"distance to optimum exploded at round {self.t}", self.t)
        self.models[self.t] = w

    def record(self, label: str) -> RunRecord:
        E = self.models - self.problem.w_opt
        dist = np.einsum("ti,ti->t", E, E)
        gap = 0.5 * np.einsum("ti,ij,tj->t", E, self.problem.A_bar, E)
        return RunRecord(self.models, dist, gap, self.dirs, label)


def fedavg_run(problem: FederatedProblem, config: RunConfig, w0) -> RunRecord:
    """FedAvg: w+ = w - alpha * sum_c q_c (w - w_c^(H)), q renormalised over sampled clients."""
    config.validate(problem.M)
    w = _check_vector(w0, problem.dim).copy()
    rec = _Recorder(problem, w, config.T)
    sample_rng = rngmod.stream(config.seed, rngmod.ALGORITHM, 0)
    noise_rng = rngmod.stream(config.seed, rngmod.ALGORITHM, 1)
    noise = config.noise if config.mode == LOCAL_SGD else None
    scale = config.eta * config.H
    for t in range(config.T):
        if config.sample is None or config.sample == problem.M:
            idx = np.arange(problem.M)
        else:
            idx = np.sort(sample_rng.choice(problem.M, size=config.sample, replace=False))
        q = problem.weights[idx] / problem.weights[idx].sum()
        W = local_endpoints(problem, w, config.eta, config.H, clients=idx,
                            noise=noise, rng=noise_rng)
        delta = q @ (w - W)
        w_next = w - config.alpha * delta
        # Same step written as a scaled pseudo-gradient move.
        G_hat = delta / scale
        w_alt = w - config.alpha * scale * G_hat
        tol = 1e-10 * max(1.0, float(np.abs(w).max()))
        assert np.abs(w_next - w_alt).max() <= tol, f"update forms disagree at round {t}"
        rec.push(w_next, G_hat)
        w = w_next
    return rec.record(f"fedavg[{config.mode},H={config.H}]")


def gd_run(problem: FederatedProblem, lr: float, T: int, w0) -> RunRecord:
    if not lr > 0 or T < 1:
        raise ValueError("lr must be positive and T >= 1")
    w = _check_vector(w0, problem.dim).copy()
    rec = _Recorder(problem, w, T)
    for _ in range(T):
        g = global_gradient(problem, w)
        w = w - lr * g
        rec.push(w, g)
    return rec.record("gd")


def minibatch_sgd_run(problem: FederatedProblem, lr: float, T: int, w0, noise: NoiseModel,
                      rng: np.random.Generator, H: int = 1) -> RunRecord:
    """Each round averages M*H independent stochastic gradients taken at w^(t)."""
    if not lr > 0 or T < 1 or H < 1:
        raise ValueError("lr must be positive, T and H >= 1")
    w = _check_vector(w0, problem.dim).copy()
    rec = _Recorder(problem, w, T)
    for _ in range(T):
        g = minibatch_gradient(problem, w, noise, rng, H)
        w = w - lr * g
        rec.push(w, g)
    return rec.record(f"minibatch-sgd[H={H}]")


def minibatch_gradient(problem: FederatedProblem, w, noise: NoiseModel,
                       rng: np.random.Generator, H: int = 1) -> np.ndarray:
    """Weighted average over clients of H stochastic gradients each."""
    if isinstance(noise, AdditiveGaussian):
        g = global_gradient(problem, w)
        if noise.sigma_sq == 0:
            return g
        draws = rng.normal(0.0, np.sqrt(noise.sigma_sq / problem.dim),
                           size=(problem.M, H, problem.dim))
        return g + problem.weights @ draws.mean(axis=1)
    acc = np.zeros(problem.dim)
    for c, p in enumerate(problem.weights):
        acc += p * np.mean([stochastic_gradient(problem, c, w, noise, rng) for _ in range(H)],
                           axis=0)
    return acc
