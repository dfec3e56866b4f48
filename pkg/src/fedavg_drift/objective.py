"""Quadratic client objectives and the weighted global objective.

Each client loss is

    F_c(w) = 1/2 (w - w_ref)^T A_c (w - w_ref) - b_c^T (w - w_ref)

(the additive constant is dropped), so ``grad F_c(w) = A_c (w - w_ref) - b_c``
and the local minimizer is ``w_ref + A_c^{-1} b_c``. The global objective is
``F = sum_c p_c F_c``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import SingularProblemError

SYMMETRY_RTOL = 1e-12
MAX_CONDITION = 1e12
FORMAT_VERSION = 1


@dataclass
class ClientObjective:
    A: np.ndarray
    b: np.ndarray
    w_ref: np.ndarray
    weight: float
    # Raw regression samples (features ``X`` of shape (n, d), labels ``y``),
    # only needed by the minibatch noise model.
    X: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        d = A.shape[0]
        scale = max(np.abs(A).max(), np.finfo(float).tiny)
        asym = np.abs(A - A.T).max() / scale
        if asym > 1e-8:
            raise ValueError(f"A is not symmetric (relative asymmetry {asym:.3g})")
        self.A = 0.5 * (A + A.T)
        self.b = np.array(self.b, dtype=float).reshape(-1)
        self.w_ref = np.array(self.w_ref, dtype=float).reshape(-1)
        if self.b.shape != (d,) or self.w_ref.shape != (d,):
            raise ValueError("b and w_ref must have the same dimension as A")
        self.weight = float(self.weight)
        if not self.weight > 0:
            raise ValueError(f"client weight must be positive, got {self.weight}")
        eig = np.linalg.eigvalsh(self.A)
        if eig[0] <= 0:
            raise SingularProblemError(
                f"A is not positive definite (smallest eigenvalue {eig[0]:.3g})"
            )
        self._eig = eig
        if self.X is not None:
            self.X = np.asarray(self.X, dtype=float)
            self.y = np.asarray(self.y, dtype=float).reshape(-1)
            if self.X.ndim != 2 or self.X.shape[1] != d or self.y.shape[0] != self.X.shape[0]:
                raise ValueError("raw samples must be X (n, d) and y (n,)")

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig

    @property
    def local_minimizer(self) -> np.ndarray:
        return self.w_ref + np.linalg.solve(self.A, self.b)

    @property
    def has_samples(self) -> bool:
        return self.X is not None

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.A @ (w - self.w_ref) - self.b

    def loss(self, w: np.ndarray) -> float:
        e = w - self.w_ref
        return float(0.5 * e @ self.A @ e - self.b @ e)


@dataclass
class FederatedProblem:
    clients: list[ClientObjective]
    dim: int = field(init=False)
    L: float = field(init=False)
    mu: float = field(init=False)
    w_opt: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.clients:
            raise ValueError("a federated problem needs at least one client")
        self.dim = self.clients[0].dim
        if any(c.dim != self.dim for c in self.clients):
            raise ValueError("all clients must share one dimension")
        total = sum(c.weight for c in self.clients)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"client weights must sum to 1, got {total!r}")
        self.mu, self.L = smoothness_constants(self.clients)
        # Stacked copies for vectorised per-client work.
        self.A_stack = np.stack([c.A for c in self.clients])
        self.b_stack = np.stack([c.b for c in self.clients])
        self.w_ref_stack = np.stack([c.w_ref for c in self.clients])
        self.weights = np.array([c.weight for c in self.clients])
        self.A_bar = np.einsum("m,mij->ij", self.weights, self.A_stack)
        self.w_opt = solve_global_minimizer(self.clients)

    @property
    def M(self) -> int:
        return len(self.clients)

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def has_samples(self) -> bool:
        return all(c.has_samples for c in self.clients)

    def client_gradients(self, W: np.ndarray) -> np.ndarray:
        """Gradients of every client, row ``c`` evaluated at ``W[c]`` (or at ``W`` if 1-D)."""
        W = np.asarray(W, dtype=float)
        E = W - self.w_ref_stack
        return np.einsum("mij,mj->mi", self.A_stack, E) - self.b_stack

    def global_loss(self, w: np.ndarray) -> float:
        w = _check_vector(w, self.dim)
        return float(sum(c.weight * c.loss(w) for c in self.clients))

    def loss_gap(self, w: np.ndarray) -> float:
        """F(w) - F(w_opt), evaluated as 1/2 e^T A_bar e to avoid cancellation."""
        e = _check_vector(w, self.dim) - self.w_opt
        return float(0.5 * e @ self.A_bar @ e)

    def reweighted(self, weights: Sequence[float]) -> "FederatedProblem":
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.M,):
            raise ValueError(f"expected {self.M} weights, got shape {weights.shape}")
        weights = weights / weights.sum()
        return FederatedProblem(
            [
                ClientObjective(c.A, c.b, c.w_ref, float(p), c.X, c.y)
                for c, p in zip(self.clients, weights)
            ]
        )


def _check_vector(w, d: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (d,):
        raise ValueError(f"expected a vector of dimension {d}, got shape {w.shape}")
    return w


def _check_client(problem: FederatedProblem, c: int) -> ClientObjective:
    if not 0 <= c < problem.M:
        raise IndexError(f"client index {c} out of range for {problem.M} clients")
    return problem.clients[c]


def local_gradient(problem: FederatedProblem, c: int, w) -> np.ndarray:
    client = _check_client(problem, c)
    return client.gradient(_check_vector(w, problem.dim))


def global_gradient(problem: FederatedProblem, w) -> np.ndarray:
    w = _check_vector(w, problem.dim)
    g = np.zeros(problem.dim)
    for client in problem.clients:
        g += client.weight * client.gradient(w)
    return g


def solve_global_minimizer(clients: Sequence[ClientObjective]) -> np.ndarray:
    """Exact minimizer ``w_ref + A_bar^{-1} b_bar`` of the weighted quadratic.

    Clients may carry different ``w_ref``; in general the minimizer solves
    ``A_bar w = sum_c p_c (A_c w_ref_c + b_c)``.
    """
    A_bar = sum(c.weight * c.A for c in clients)
    rhs = sum(c.weight * (c.A @ c.w_ref + c.b) for c in clients)
    cond = np.linalg.cond(A_bar)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularProblemError(f"averaged Hessian is singular (condition number {cond:.3g})")
    return np.linalg.solve(A_bar, rhs)


def smoothness_constants(clients: Sequence[ClientObjective]) -> tuple[float, float]:
    """(mu, L): smallest and largest eigenvalue over all client Hessians."""
    if not clients:
        raise ValueError("need at least one client")
    mu = min(float(c.eigenvalues[0]) for c in clients)
    L = max(float(c.eigenvalues[-1]) for c in clients)
    return mu, L


# -- stochastic gradients ----------------------------------------------------


@dataclass(frozen=True)
class AdditiveGaussian:
    """Isotropic Gaussian noise with total variance ``sigma_sq`` (summed over coordinates)."""

    sigma_sq: float

    def __post_init__(self):
        if self.sigma_sq < 0:
            raise ValueError("sigma_sq must be non-negative")


@dataclass(frozen=True)
class Minibatch:
    """Gradient of ``batch_size`` samples drawn with replacement from the client's data.

    A batch at least as large as the local dataset uses the full dataset, so it
    returns the exact local gradient.
    """

    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


NoiseModel = Union[AdditiveGaussian, Minibatch]


def stochastic_gradient(problem: FederatedProblem, c: int, w, noise: NoiseModel,
                        rng: np.random.Generator) -> np.ndarray:
    client = _check_client(problem, c)
    w = _check_vector(w, problem.dim)
    if isinstance(noise, AdditiveGaussian):
        g = client.gradient(w)
        if noise.sigma_sq == 0:
            return g
        return g + rng.normal(0.0, np.sqrt(noise.sigma_sq / problem.dim), size=problem.dim)
    if isinstance(noise, Minibatch):
        if not client.has_samples:
            raise ValueError(f"client {c} has no raw samples; minibatch noise is unavailable")
        n = client.X.shape[0]
        if noise.batch_size >= n:
            X, y = client.X, client.y
        else:
            idx = rng.integers(0, n, size=noise.batch_size)
            X, y = client.X[idx], client.y[idx]
        return X.T @ (X @ w - y) / X.shape[0]
    raise TypeError(f"unknown noise model {noise!r}")


def noise_draws(noise: NoiseModel, dim: int, shape: tuple[int, ...],
                rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian perturbations of the given leading shape (vectorised path)."""
    if not isinstance(noise, AdditiveGaussian):
        raise TypeError("vectorised noise draws only support AdditiveGaussian")
    if noise.sigma_sq == 0:
        return np.zeros(shape + (dim,))
    return rng.normal(0.0, np.sqrt(noise.sigma_sq / dim), size=shape + (dim,))


# -- construction helpers ----------------------------------------------------


def problem_from_arrays(A, b, w_ref, weights=None) -> FederatedProblem:
    """Build a problem from stacked arrays ``A`` (M, d, d), ``b`` (M, d)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:  # scalar clients, 1-D problem
        A = A.reshape(-1, 1, 1)
    M, d = A.shape[0], A.shape[1]
    b = np.asarray(b, dtype=float).reshape(M, d)
    w_ref = np.broadcast_to(np.asarray(w_ref, dtype=float), (M, d))
    if weights is None:
        weights = np.full(M, 1.0 / M)
    return FederatedProblem(
        [ClientObjective(A[c], b[c], w_ref[c], weights[c]) for c in range(M)]
    )


def without_noise(problem: FederatedProblem) -> FederatedProblem:
    """Copy of ``problem`` with every b_c set to zero (so every local optimum is w_ref)."""
    return FederatedProblem(
        [ClientObjective(c.A, np.zeros_like(c.b), c.w_ref, c.weight) for c in problem.clients]
    )


# -- serialization -----------------------------------------------------------


def problem_to_dict(problem: FederatedProblem, include_samples: bool = True) -> dict:
    clients = []
    for c in problem.clients:
        entry = {
            "weight": c.weight,
            "A": c.A.tolist(),
            "b": c.b.tolist(),
            "w_ref": c.w_ref.tolist(),
        }
        if include_samples and c.has_samples:
            entry["X"] = c.X.tolist()
            entry["y"] = c.y.tolist()
        clients.append(entry)
    return {"format": "fedavg-drift-problem", "version": FORMAT_VERSION,
            "dim": problem.dim, "clients": clients}


def problem_from_dict(data: dict) -> FederatedProblem:
    if data.get("format") != "fedavg-drift-problem":
        raise ValueError("not a fedavg-drift problem file")
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported problem file version {data.get('version')}")
    clients = [
        ClientObjective(e["A"], e["b"], e["w_ref"], e["weight"], e.get("X"), e.get("y"))
        for e in data["clients"]
    ]
    problem = FederatedProblem(clients)
    if problem.dim != data["dim"]:
        raise ValueError("declared dimension does not match the client data")
    return problem


def save_problem(problem: FederatedProblem, path, include_samples: bool = True) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly.
    Path(path).write_text(json.dumps(problem_to_dict(problem, include_samples)))


def load_problem(path) -> FederatedProblem:
    return problem_from_dict(json.loads(Path(path).read_text()))
