import math

import numpy as np
import pytest

from fedavg_drift.algorithms import RunConfig, fedavg_run
from fedavg_drift.localupdate import averaged_pseudo_gradient, gradient_bias
from fedavg_drift.objective import problem_from_arrays
from fedavg_drift.synthgen import random_quadratic
from fedavg_drift.theory import (check_thm2_preconditions, closed_form_localgd,
                                 corollary1_rates, corollary1_schedule, corollary2_rate,
                                 domination, iterate_bias_bound, lemma1_bound,
                                 rounds_to_epsilon, thm2_bound, tilde_constants, variance_bound)


def test_closed_form_scalar():
    p = problem_from_arrays([1.0], [0.0], [0.0])
    # per-round factor (1 - eta)^H with eta = 0.15, H = 2 is 0.7225
    out = closed_form_localgd(p, 0.15, 2, 5, [1.0])
    assert out[:, 0] == pytest.approx(0.7225 ** np.arange(6))


def test_closed_form_matches_simulation():
    p = random_quadratic(3, d=5, M=7)
    eta, H, T = 0.5 / p.L, 6, 25
    w0 = np.full(5, -1.0)
    sim = fedavg_run(p, RunConfig(1.0, eta, H, T), w0).models
    assert np.abs(sim - closed_form_localgd(p, eta, H, T, w0)).max() < 1e-10


def test_tilde_constants_examples():
    mu_t, L_t = tilde_constants(0.1, 1.0, 1)
    assert (mu_t, L_t) == pytest.approx((1.0, 19.0))
    assert tilde_constants(0.1, 1.0, 2) == pytest.approx((0.95, 9.05))
    mu_t, L_t = tilde_constants(1.0 / 3, 0.3, 2)
    q = (1 - 0.1) ** 2
    assert mu_t == pytest.approx((1 - q) / (2 / 3))
    assert L_t == pytest.approx((1 + q) / (2 / 3))
    with pytest.raises(ValueError):
        tilde_constants(2.0, 1.0, 3)


def test_tilde_mu_between_half_mu_and_mu():
    for eta in np.linspace(0.01, 1.0, 5):
        for mu in np.linspace(0.05, 1.0, 5):
            for H in (1, 2, 5, 20):
                if eta * H * mu > 1:
                    continue
                mu_t, _ = tilde_constants(eta, mu, H)
                assert mu / 2 <= mu_t <= mu * (1 + 1e-12)


def test_pseudo_gradient_monotonicity_and_cocoercivity():
    p = random_quadratic(17, d=4, M=6)
    eta, H = 0.8 / p.L, 5
    mu_t, L_t = tilde_constants(eta, p.mu, H)
    g = np.random.default_rng(0)
    for _ in range(50):
        w, u = g.standard_normal(4) * 3, g.standard_normal(4) * 3
        dG = averaged_pseudo_gradient(p, w, eta, H) - averaged_pseudo_gradient(p, u, eta, H)
        inner, dist = dG @ (w - u), (w - u) @ (w - u)
        assert mu_t * dist * (1 - 1e-9) <= inner <= L_t * dist * (1 + 1e-9)
        assert dG @ dG / L_t <= inner * (1 + 1e-9)


def test_lemma1_examples():
    assert lemma1_bound(1.0, 0.5, 1, 1.0, 1, 2.0, [0.0]) == pytest.approx(1.0)
    assert lemma1_bound(1.0, 0.1, 1, 1.0, 2, 0.0, [1.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lemma1_bound(1.0, 0.1, 1, 1.0, 3, 0.0, [1.0])


def test_lemma1_dominates_local_gd_loss():
    p = random_quadratic(21, d=4, M=5)
    eta, H, T = 0.5 / p.L, 4, 20
    alpha = 1.0 / (eta * H * p.L)
    w0 = np.full(4, 2.0)
    rec = fedavg_run(p, RunConfig(min(alpha, 1.0), eta, H, T), w0)
    hist = []
    for t in range(T):
        B = np.stack([gradient_bias(p, c, rec.models[t], eta, H) for c in range(p.M)])
        mean_B = p.weights @ B
        hist.append(float(mean_B @ mean_B))
        bound = lemma1_bound(min(alpha, 1.0), eta, H, p.mu, t + 1, rec.loss_gap[0], hist)
        assert rec.loss_gap[t + 1] <= bound * (1 + 1e-9)


def test_thm2_trivial_cases():
    tr = thm2_bound(0.125, 0.5, 1, 1.0, 4, 1.0, 0.0, 0.0, 0.0, 2.0)
    assert tr.values == pytest.approx((1 - 0.125 * 0.5 / 2) ** np.arange(5))
    assert tr.floor == 0.0
    tr = thm2_bound(0.125, 0.5, 1, 1.0, 3, 0.0, 0.0, 0.0, 0.1, 2.0)
    assert tr.values == pytest.approx([0.2] * 4)


def test_thm2_preconditions():
    with pytest.raises(ValueError, match="alpha"):
        check_thm2_preconditions(0.5, 0.1, 1, 1.0, 1.0)
    with pytest.raises(ValueError, match="eta"):
        check_thm2_preconditions(0.1, 0.6, 2, 1.0, 1.0)
    check_thm2_preconditions(0.125, 0.5, 2, 1.0, 1.0)


def test_variance_and_iterate_bias_bounds():
    assert variance_bound(1.0, 10, 20) == pytest.approx(0.01)
    assert iterate_bias_bound(0.1, 1.0, 1.0, 2) == pytest.approx(0.01)
    assert iterate_bias_bound(0.1, 1.0, 1.0, 1) == 0.0


def test_corollary_rates():
    assert corollary1_rates(1.0, 1, 16, 0.0, "gd") == pytest.approx(math.exp(-1))
    r1 = corollary1_rates(16.0, 1, 256, 0.0, "gd")
    assert r1 == pytest.approx(math.exp(-1))
    # H >= kappa: exponent -T/16 independent of kappa
    for kappa in (4.0, 64.0):
        assert math.log(corollary1_rates(kappa, int(kappa), 80, 0.0, "gd")) == pytest.approx(-5.0)
    assert corollary1_rates(4.0, 2, 10, 0.5, "sgd", sigma_sq=1.0, M=5) == pytest.approx(
        1 / 100 + 1 / 200 + 0.25)
    with pytest.raises(ValueError):
        corollary1_rates(0.5, 1, 1, 0.0, "gd")
    with pytest.raises(ValueError):
        corollary1_rates(2.0, 1, 1, 0.0, "other")
    assert corollary2_rate(2.0, 4, 16, 4, 1.0, 0.0) == pytest.approx(
        math.exp(-1) + 1 / 256)


def test_corollary1_schedule():
    nu, rate = corollary1_schedule(1.0, 1.0, 1.0, 8, 1, 100, 1.0)
    assert nu == pytest.approx(2 * math.log(100.0))
    assert rate == pytest.approx(nu / 100)
    with pytest.raises(ValueError):
        corollary1_schedule(1.0, 1.0, 1.0, 8, 1, 100, 0.0)


def test_rounds_to_epsilon():
    assert rounds_to_epsilon("gd", 100, 1, 0.001) == pytest.approx(100 * math.log(1000), rel=1e-12)
    assert rounds_to_epsilon("gd", 100, 1, 0.001) == pytest.approx(690.8, abs=0.05)
    assert rounds_to_epsilon("fedavg-ours", 100, 100, 0.001) == pytest.approx(math.log(1000))
    assert rounds_to_epsilon("fedavg-ours", 100, 10, 0.001) == pytest.approx(10 * math.log(1000))
    a = rounds_to_epsilon("fedavg-koloskova", 100, 10, 0.01)
    b = rounds_to_epsilon("fedavg-woodworth", 100, 10, 0.005)
    assert b / a == pytest.approx(4.0)
    with pytest.raises(ValueError):
        rounds_to_epsilon("gd", 10, 1, 1.5)
    with pytest.raises(ValueError):
        rounds_to_epsilon("magic", 10, 1, 0.1)


def test_domination():
    ok = domination(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.5, 3.5]), margin=0.4)
    assert ok.tolist() == [True, False, True]
