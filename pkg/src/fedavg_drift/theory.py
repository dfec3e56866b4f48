"""Closed forms and convergence bounds for FedAvg on strongly convex problems.

Rate expressions hidden behind big-O are returned with a unit prefactor;
compare their shapes (exponents, slopes), not their absolute values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import gd_operator_powers
from .objective import FederatedProblem, _check_vector

_SLACK = 1e-12


def closed_form_localgd(problem: FederatedProblem, eta: float, H: int, T: int, w0) -> np.ndarray:
    """Local GD iterates (server rate 1) from the exact affine recursion

        w^(t+1) - w_opt = E_c[(I - eta A_c)^H] (w^(t) - w_opt) - eta H G(w_opt),

    where eta H G(w_opt) = E_c[(I - (I - eta A_c)^H)(w_opt - w_c*)].
    Returns a (T+1, d) array.
    """
    w0 = _check_vector(w0, problem.dim)
    d = problem.dim
    K = np.zeros((d, d))
    drift = np.zeros(d)
    for client in problem.clients:
        Kc = gd_operator_powers(client.A, eta, H)[H]
        K += client.weight * Kc
        drift += client.weight * ((np.eye(d) - Kc) @ (problem.w_opt - client.local_minimizer))
    out = np.empty((T + 1, d))
    e = w0 - problem.w_opt
    out[0] = w0
    for t in range(T):
        e = K @ e - drift
        out[t + 1] = problem.w_opt + e
    return out


def tilde_constants(eta: float, mu: float, H: int) -> tuple[float, float]:
    """Strong-monotonicity and co-coercivity constants of the averaged pseudo-gradient."""
    if not eta > 0 or not mu > 0 or H < 1:
        raise ValueError("eta, mu must be positive and H >= 1")
    if eta * mu > 1 + _SLACK:
        raise ValueError(f"need eta*mu <= 1, got {eta * mu}")
    q = (1.0 - eta * mu) ** H
    return (1.0 - q) / (eta * H), (1.0 + q) / (eta * H)


def lemma1_bound(alpha: float, eta: float, H: int, mu: float, T: int, F0_gap: float,
                 bias_norm_sq_history: Sequence[float]) -> float:
    """Loss-gap bound for deterministic FedAvg viewed as biased GD.

    Requires alpha*eta*H*L <= 1, which the caller is responsible for.
    """
    hist = np.asarray(bias_norm_sq_history, dtype=float)
    if hist.shape != (T,):
        raise ValueError(f"need a bias history of length T={T}, got {hist.shape}")
    return float((1.0 - alpha * eta * H * mu) ** T * F0_gap + hist.sum() / (2.0 * mu * T))


@dataclass
class BoundTrace:
    values: np.ndarray        # bound at rounds 0..T
    contraction: float        # per-round factor on the initial distance
    variance_term: float
    iterate_bias_term: float
    drift_term: float

    @property
    def floor(self) -> float:
        return self.variance_term + self.iterate_bias_term + self.drift_term


def check_thm2_preconditions(alpha: float, eta: float, H: int, mu: float, L: float) -> None:
    if not 0 < alpha <= 0.125 * (1 + _SLACK):
        raise ValueError(f"violated alpha <= 1/8 (alpha = {alpha})")
    limit = min(1.0 / L, 1.0 / (mu * H))
    if not 0 < eta <= limit * (1 + _SLACK):
        raise ValueError(f"violated eta <= min(1/L, 1/(mu H)) = {limit:.6g} (eta = {eta})")


def thm2_bound(alpha: float, eta: float, H: int, mu: float, T: int, dist0_sq: float,
               var_max: float, delta_sq_max: float, rho: float, L: float) -> BoundTrace:
    """Four-term bound on E||w^(t) - w_opt||^2 for t = 0..T.

    (1 - alpha eta H mu / 2)^t dist0 + (2 alpha eta H / mu) Var
        + 20 delta^2 / mu^2 + 20 rho^2 / mu^2
    """
    check_thm2_preconditions(alpha, eta, H, mu, L)
    factor = 1.0 - 0.5 * alpha * eta * H * mu
    var_term = 2.0 * alpha * eta * H / mu * var_max
    bias_term = 20.0 * delta_sq_max / mu ** 2
    drift_term = 20.0 * rho ** 2 / mu ** 2
    t = np.arange(T + 1)
    values = factor ** t * dist0_sq + (var_term + bias_term + drift_term)
    return BoundTrace(values, factor, var_term, bias_term, drift_term)


def variance_bound(sigma_sq: float, M: int, H: int) -> float:
    return 2.0 * sigma_sq / (M * H)


def iterate_bias_bound(eta: float, L: float, sigma_sq: float, H: int) -> float:
    return eta ** 2 * L ** 2 * sigma_sq * (H - 1)


def corollary1_rates(kappa: float, H: int, T: int, rho: float, regime: str,
                     sigma_sq: float = 0.0, M: int = 1, prefactor: float = 1.0) -> float:
    """Rate shape for strongly convex objectives.

    ``sgd``: sigma^2/(M H T) + sigma^2/(H T^2) + rho^2
    ``gd``:  exp(-T min(kappa, H) / (16 kappa)) + rho^2
    """
    if kappa < 1:
        raise ValueError("condition number must be >= 1")
    if regime == "sgd":
        main = sigma_sq / (M * H * T) + sigma_sq / (H * T ** 2)
    elif regime == "gd":
        main = math.exp(-T * min(kappa, H) / (16.0 * kappa))
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return prefactor * (main + rho ** 2)


def corollary1_schedule(r0: float, mu: float, L: float, M: int, H: int, T: int,
                        sigma_sq: float) -> tuple[float, float]:
    """(nu, effective rate alpha*eta*H = nu / (mu T)) for the stochastic regime."""
    if sigma_sq <= 0 or r0 <= 0:
        raise ValueError("schedule needs sigma_sq > 0 and r0 > 0")
    nu = 2.0 * math.log(max(r0 * mu ** 2 * M * H * T / (8.0 * sigma_sq),
                            r0 * mu ** 4 * H * T ** 2 / (1280.0 * L ** 2 * sigma_sq)))
    return nu, nu / (mu * T)


def corollary2_rate(kappa: float, H: int, T: int, M: int, sigma_sq: float, rho: float,
                    prefactor: float = 1.0) -> float:
    """Quadratic objectives: exp(-T min(kappa, H)/(16 kappa)) + sigma^2/(M H T) + rho^2."""
    if kappa < 1:
        raise ValueError("condition number must be >= 1")
    return prefactor * (math.exp(-T * min(kappa, H) / (16.0 * kappa))
                        + sigma_sq / (M * H * T) + rho ** 2)


ROUND_METHODS = ("gd", "fedavg-ours", "fedavg-koloskova", "fedavg-woodworth")


def rounds_to_epsilon(method: str, kappa: float, H: int, epsilon: float) -> float:
    """Communication rounds to reach error epsilon when rho = 0 (constants dropped)."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    log_term = math.log(1.0 / epsilon)
    if method == "gd":
        return kappa * log_term
    if method == "fedavg-ours":
        return max(1.0, kappa / H) * log_term
    if method in ("fedavg-koloskova", "fedavg-woodworth"):
        return epsilon ** -2
    raise ValueError(f"unknown method {method!r}; expected one of {ROUND_METHODS}")


def domination(measured: np.ndarray, bound: np.ndarray,
               margin: np.ndarray | float = 0.0) -> np.ndarray:
    """Per-round pass flags for ``measured - margin <= bound``."""
    return np.asarray(measured) - np.asarray(margin) <= np.asarray(bound)
