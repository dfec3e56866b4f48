"""Synthetic federated linear-regression problems.

The main generator follows the shared-labelling statistical model: every
client labels its inputs with the same linear model ``w_ref`` plus zero-mean
noise, but clients differ in their input scale ``nu_c``. A few extra
constructors build small controlled problems used by the tests and recipes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .errors import SingularProblemError
from .objective import ClientObjective, FederatedProblem

MAX_RETRIES = 3


@dataclass(frozen=True)
class SynthConfig:
    d: int = 30
    M: int = 100
    n: int = 100
    nu_max: float = 5.0
    eps_var: float = 0.09
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.M < 1:
            raise ValueError("d and M must be >= 1")
        if self.n < self.d:
            raise ValueError(f"n ({self.n}) must be >= d ({self.d}) for invertible A_c")
        if not self.nu_max > 0:
            raise ValueError("nu_max must be positive")
        if self.eps_var < 0:
            raise ValueError("eps_var must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _draw_client(config: SynthConfig, c: int, w_ref: np.ndarray):
    for attempt in range(MAX_RETRIES + 1):
        g = rngmod.stream(config.seed, rngmod.GENERATOR, 1, c, attempt)
        nu = g.uniform(0.0, config.nu_max)
        X = g.uniform(0.0, nu, size=(config.n, config.d))
        eps = g.normal(0.0, np.sqrt(config.eps_var), size=config.n)
        y = X @ w_ref + eps
        A = X.T @ X / config.n
        b = X.T @ eps / config.n
        eig_min = np.linalg.eigvalsh(0.5 * (A + A.T))[0]
        # Relative floor: anything below this is numerically singular.
        if eig_min > 1e-12 * max(np.abs(A).max(), 1e-300):
            return A, b, X, y
    raise SingularProblemError(
        f"client {c}: A_c singular after {MAX_RETRIES} retries (seed {config.seed})"
    )


def generate(config: SynthConfig, workers: int = 1) -> FederatedProblem:
    """Draw a problem; the result is bit-identical for any ``workers`` count."""
    w_ref = rngmod.stream(config.seed, rngmod.GENERATOR, 0).standard_normal(config.d)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            drawn = list(pool.map(lambda c: _draw_client(config, c, w_ref), range(config.M)))
    else:
        drawn = [_draw_client(config, c, w_ref) for c in range(config.M)]
    p = 1.0 / config.M
    clients = [ClientObjective(A, b, w_ref, p, X, y) for A, b, X, y in drawn]
    return FederatedProblem(_fix_weights(clients))


def _fix_weights(clients: list[ClientObjective]) -> list[ClientObjective]:
    # 1/M summed M times can miss 1 by a few ulps; push the residue onto client 0.
    total = sum(c.weight for c in clients)
    if total != 1.0:
        clients[0].weight += 1.0 - total
    return clients


def random_quadratic(seed: int, d: int, M: int, eig_range=(0.5, 5.0),
                     b_scale: float = 1.0, common_hessian: bool = False,
                     random_weights: bool = True) -> FederatedProblem:
    """Random rotated-spectrum quadratic clients with Gaussian b_c."""
    g = rngmod.stream(seed, rngmod.GENERATOR, 2)
    w_ref = g.standard_normal(d)

    def spd():
        Q, _ = np.linalg.qr(g.standard_normal((d, d)))
        lam = g.uniform(*eig_range, size=d)
        return (Q * lam) @ Q.T

    shared = spd() if common_hessian else None
    weights = g.uniform(0.5, 1.5, size=M) if random_weights else np.ones(M)
    weights = weights / weights.sum()
    clients = [
        ClientObjective(shared if common_hessian else spd(),
                        b_scale * g.standard_normal(d), w_ref, weights[c])
        for c in range(M)
    ]
    return FederatedProblem(_fix_weights(clients))


def conditioned_problem(seed: int, kappa: float, d: int = 10, M: int = 20) -> FederatedProblem:
    """Heterogeneous-Hessian clients with b_c = 0 and global mu = 1, L = kappa.

    Every client shares eigenvalue 1 along the first axis and eigenvalue
    ``kappa`` along the second, with a random spectrum in between on the rest
    of the space. The averaged Hessian therefore keeps the full condition
    number, so plain GD cannot shortcut it.
    """
    if d < 3:
        raise ValueError("need d >= 3")
    g = rngmod.stream(seed, rngmod.GENERATOR, 3)
    w_ref = g.standard_normal(d)
    clients = []
    for _ in range(M):
        Q, _ = np.linalg.qr(g.standard_normal((d - 2, d - 2)))
        lam = g.uniform(1.0, kappa, size=d - 2)
        A = np.zeros((d, d))
        A[0, 0] = 1.0
        A[1, 1] = kappa
        A[2:, 2:] = (Q * lam) @ Q.T
        clients.append(ClientObjective(A, np.zeros(d), w_ref, 1.0 / M))
    return FederatedProblem(_fix_weights(clients))
