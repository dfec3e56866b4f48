"""Client-side local updates and the pseudo-gradient objects built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .objective import (AdditiveGaussian, FederatedProblem, NoiseModel, _check_client,
                        _check_vector, stochastic_gradient)

DETERMINISTIC = "deterministic"
STOCHASTIC = "stochastic"


@dataclass
class LocalTrajectory:
    start: np.ndarray
    iterates: np.ndarray | None  # (H+1, d); None when only the endpoint was kept
    endpoint: np.ndarray
    eta: float
    H: int
    mode: str = DETERMINISTIC


def _check_steps(eta: float, H: int) -> None:
    if not eta > 0:
        raise ValueError(f"local learning rate must be positive, got {eta}")
    if int(H) != H or H < 1:
        raise ValueError(f"number of local steps must be a positive integer, got {H}")


def _run(problem, c, start, eta, H, grad, keep_iterates, mode) -> LocalTrajectory:
    _check_steps(eta, H)
    client = _check_client(problem, c)
    w = _check_vector(start, problem.dim).copy()
    start = w.copy()
    iterates = [w.copy()] if keep_iterates else None
    for h in range(H):
        w = w - eta * grad(client, w)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"client {c}: non-finite iterate at local step {h + 1}", h + 1)
        if keep_iterates:
            iterates.append(w)
    return LocalTrajectory(start, np.array(iterates) if keep_iterates else None,
                           w, float(eta), int(H), mode)


def run_local_gd(problem: FederatedProblem, c: int, start, eta: float, H: int,
                 keep_iterates: bool = True) -> LocalTrajectory:
    return _run(problem, c, start, eta, H, lambda client, w: client.gradient(w),
                keep_iterates, DETERMINISTIC)


def run_local_sgd(problem: FederatedProblem, c: int, start, eta: float, H: int,
                  noise: NoiseModel, rng: np.random.Generator,
                  keep_iterates: bool = True) -> LocalTrajectory:
    return _run(problem, c, start, eta, H,
                lambda client, w: stochastic_gradient(problem, c, w, noise, rng),
                keep_iterates, STOCHASTIC)


def pseudo_gradient(trajectory: LocalTrajectory) -> np.ndarray:
    return (trajectory.start - trajectory.endpoint) / (trajectory.eta * trajectory.H)


def gradient_bias(problem: FederatedProblem, c: int, start, eta: float, H: int) -> np.ndarray:
    """B_c(w) = grad F_c(w) - G_c(w), cross-checked against the step-average form."""
    traj = run_local_gd(problem, c, start, eta, H)
    client = problem.clients[c]
    g0 = client.gradient(traj.start)
    bias = g0 - pseudo_gradient(traj)
    step_avg = np.mean([g0 - client.gradient(w) for w in traj.iterates[:-1]], axis=0)
    scale = max(1.0, float(np.abs(g0).max()))
    gap = float(np.abs(bias - step_avg).max())
    assert gap <= 1e-10 * scale, f"gradient bias forms disagree by {gap:.3g}"
    return bias


# -- vectorised paths used by the metrics and the FedAvg loop ------------------


def local_endpoints(problem: FederatedProblem, start, eta: float, H: int,
                    clients=None, noise: NoiseModel | None = None,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Endpoints w_c^(H) of every (selected) client, one row per client.

    ``start`` is either one vector shared by all clients or a (K, d) array.
    Additive Gaussian noise is drawn as one (K, d) block per step, in client
    order; minibatch noise goes through the per-client oracle.
    """
    _check_steps(eta, H)
    idx = np.arange(problem.M) if clients is None else np.asarray(clients)
    A = problem.A_stack[idx]
    b = problem.b_stack[idx]
    r = problem.w_ref_stack[idx]
    W = np.array(np.broadcast_to(np.asarray(start, dtype=float), (len(idx), problem.dim)))
    stochastic = noise is not None and not (
        isinstance(noise, AdditiveGaussian) and noise.sigma_sq == 0)
    for h in range(H):
        if stochastic and not isinstance(noise, AdditiveGaussian):
            G = np.stack([stochastic_gradient(problem, int(c), W[k], noise, rng)
                          for k, c in enumerate(idx)])
        else:
            G = np.einsum("kij,kj->ki", A, W - r) - b
            if stochastic:
                G += rng.normal(0.0, np.sqrt(noise.sigma_sq / problem.dim), size=G.shape)
        W -= eta * G
        if not np.all(np.isfinite(W)):
            raise DivergenceError(f"non-finite local iterate at local step {h + 1}", h + 1)
    return W


def averaged_pseudo_gradient(problem: FederatedProblem, w, eta: float, H: int) -> np.ndarray:
    """Deterministic G(w) = E_c[G_c(w)]."""
    W = local_endpoints(problem, w, eta, H)
    return problem.weights @ ((w - W) / (eta * H))


def client_pseudo_gradients(problem: FederatedProblem, w, eta: float, H: int) -> np.ndarray:
    W = local_endpoints(problem, w, eta, H)
    return (np.asarray(w) - W) / (eta * H)


@dataclass
class IterateBiasEstimate:
    delta: np.ndarray       # Monte-Carlo estimate of delta_c(w)
    stderr: np.ndarray      # per-coordinate standard error of ``delta``
    sq_norm: float          # ||delta||^2
    sq_norm_se: float       # delta-method standard error of ``sq_norm``
    reps: int


def sgd_endpoint_samples(problem: FederatedProblem, c: int, start, eta: float, H: int,
                         reps: int, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """``reps`` independent local-SGD endpoints of client ``c``, shape (reps, d)."""
    client = _check_client(problem, c)
    _check_steps(eta, H)
    start = _check_vector(start, problem.dim)
    if isinstance(noise, AdditiveGaussian):
        W = np.tile(start, (reps, 1))
        sd = np.sqrt(noise.sigma_sq / problem.dim)
        for _ in range(H):
            G = (W - client.w_ref) @ client.A - client.b
            if noise.sigma_sq > 0:
                G += rng.normal(0.0, sd, size=W.shape)
            W -= eta * G
        return W
    return np.stack([
        run_local_sgd(problem, c, start, eta, H, noise, rng, keep_iterates=False).endpoint
        for _ in range(reps)
    ])


def iterate_bias(problem: FederatedProblem, c: int, start, eta: float, H: int, reps: int,
                 rng: np.random.Generator, noise: NoiseModel) -> IterateBiasEstimate:
    """Monte-Carlo estimate of (w_GD^(H) - E[w_SGD^(H)]) / (eta H)."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if isinstance(noise, AdditiveGaussian) and noise.sigma_sq == 0:
        zero = np.zeros(problem.dim)
        return IterateBiasEstimate(zero, zero.copy(), 0.0, 0.0, reps)
    gd_end = run_local_gd(problem, c, start, eta, H, keep_iterates=False).endpoint
    samples = sgd_endpoint_samples(problem, c, start, eta, H, reps, noise, rng)
    scale = eta * H
    delta = (gd_end - samples.mean(axis=0)) / scale
    if reps > 1:
        cov = np.cov(samples, rowvar=False).reshape(problem.dim, problem.dim) / (reps * scale ** 2)
    else:
        cov = np.zeros((problem.dim, problem.dim))
    stderr = np.sqrt(np.diag(cov))
    sq_norm = float(delta @ delta)
    sq_se = float(np.sqrt(max(4.0 * delta @ cov @ delta + 2.0 * np.sum(cov * cov), 0.0)))
    return IterateBiasEstimate(delta, stderr, sq_norm, sq_se, reps)
