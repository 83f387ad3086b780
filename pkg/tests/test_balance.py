import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medfx.balance import (EPS_FEAS, BalanceProblem, Escalation, min_residual_under_cap, oracle_weights,
                           slack_for, solve_weights, solve_with_escalation)
from medfx.errors import SingularSigma, StillInfeasible
from oracles import qp_enumerate


def rand_problem(seed, n_g=30, d=6, K=1.0, scale=1.0):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(n_g, d)) + 0.5
    c = rng.uniform(0.2, 1.0, d) * scale
    return BalanceProblem(D, c, K)


def test_slack_and_cap():
    pr = rand_problem(0, n_g=27, d=6, K=2.0)
    assert pr.slack == 2.0 * math.sqrt(math.log(6) / 27)
    assert pr.cap == pytest.approx(27 ** (-2 / 3))
    assert BalanceProblem(pr.design, pr.contrast, 2.0, log_dim=50).slack == slack_for(2.0, 50, 27)


def test_zero_contrast():
    pr = BalanceProblem(np.ones((5, 2)), np.zeros(2), 1.0)
    w = solve_weights(pr)
    assert w.ok and np.all(w.tau == 0) and w.objective == 0


def test_contrast_within_slack_gives_zero():
    pr = rand_problem(1, K=5.0, scale=0.1)
    assert np.abs(pr.contrast).max() <= pr.slack
    w = solve_weights(pr)
    assert w.ok and np.all(w.tau == 0)


def test_n3_d2_lattice_oracle():
    # [DERIVED] grid search over a 3-dim lattice (step 1e-3) around the solve
    rng = np.random.default_rng(11)
    D = rng.normal(size=(3, 2)) + 1.0
    c = np.array([0.9, 0.6])
    pr = BalanceProblem(D, c, K=0.2, log_dim=3, cap=0.45)
    w = solve_weights(pr)
    assert w.ok
    g = np.arange(-40, 41) * 1e-3
    T = w.tau + np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    feas = (np.abs(c - T @ D).max(1) <= pr.slack) & (np.abs(T).max(1) <= pr.cap)
    best = (T[feas] ** 2).sum(1).min()
    assert abs(best - w.objective) <= 1e-4
    assert w.objective <= best + 1e-12
    # both constraints active at the solution
    assert w.achieved_residual_inf == pytest.approx(pr.slack, abs=1e-9)


@given(seed=st.integers(0, 100_000), n_g=st.integers(1, 4), d=st.integers(1, 2))
def test_matches_enumeration(seed, n_g, d):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(n_g, d))
    c = rng.uniform(-1.5, 1.5, d)
    pr = BalanceProblem(D, c, K=float(rng.uniform(0.05, 1.5)), log_dim=int(rng.integers(2, 30)))
    w = solve_weights(pr)
    ref = qp_enumerate(D, c, pr.slack, pr.cap)
    if ref is None:
        assert w.status == "infeasible"
    else:
        assert w.ok
        assert abs(w.objective - ref[0]) <= 1e-6
        assert w.achieved_residual_inf <= pr.slack + EPS_FEAS
        assert w.achieved_cap_inf <= pr.cap + EPS_FEAS


@given(seed=st.integers(0, 10_000), scale=st.floats(0.25, 4.0))
def test_homogeneity(seed, scale):
    pr = rand_problem(seed, n_g=40, d=5, K=0.5)
    a = solve_weights(BalanceProblem(pr.design, pr.contrast, pr.K, cap=1.0))
    b = solve_weights(BalanceProblem(pr.design, scale * pr.contrast, scale * pr.K, cap=scale))
    assert a.ok and b.ok
    np.testing.assert_allclose(b.tau, scale * a.tau, atol=1e-7 * max(1, scale))
    assert b.objective == pytest.approx(scale ** 2 * a.objective, rel=1e-6, abs=1e-12)


@given(seed=st.integers(0, 10_000))
def test_row_permutation(seed):
    pr = rand_problem(seed, n_g=25, d=4, K=0.8)
    perm = np.random.default_rng(seed + 1).permutation(25)
    a = solve_weights(pr)
    b = solve_weights(BalanceProblem(pr.design[perm], pr.contrast, pr.K))
    assert a.status == b.status
    if a.ok:
        np.testing.assert_allclose(b.tau, a.tau[perm], atol=1e-8)


def test_oracle_weights_identity():
    D = np.random.default_rng(3).normal(size=(7, 3))
    tau = oracle_weights(D, np.eye(3), np.zeros(3), np.array([1.0, 0, 0]))
    np.testing.assert_allclose(tau, D[:, 0] / 7, rtol=1e-14)


def test_oracle_weights_singular():
    with pytest.raises(SingularSigma):
        oracle_weights(np.ones((3, 2)), np.ones((2, 2)), np.zeros(2), np.ones(2))


def test_oracle_weights_norm_lln():
    # [DERIVED] ||tau*||^2 -> c' Sigma^-1 c / n_g; 10% at n_g=2000, d=10
    rng = np.random.default_rng(4)
    d, n = 10, 2000
    A = rng.normal(size=(d, d))
    Sigma = A @ A.T / d + np.eye(d)
    mu, c = rng.normal(size=d), rng.normal(size=d)
    D = mu + rng.normal(size=(n, d)) @ np.linalg.cholesky(Sigma).T
    tau = oracle_weights(D, Sigma, mu, c)
    target = c @ np.linalg.solve(Sigma, c) / n
    assert abs(tau @ tau / target - 1) < 0.1


def test_optimal_no_worse_than_oracle_tau():
    rng = np.random.default_rng(5)
    d, n = 8, 400
    mu = np.zeros(d)
    mu[:2] = 0.5
    checked = 0
    for _ in range(10):
        D = mu + rng.normal(size=(n, d))
        pr = BalanceProblem(D, D.mean(0), 2.75)
        tau = oracle_weights(D, np.eye(d), mu, mu)
        if pr.residual_inf(tau) <= pr.slack and np.abs(tau).max() <= pr.cap:
            checked += 1
            assert solve_weights(pr).objective <= tau @ tau + 1e-10
    assert checked >= 5


def test_escalation_feasible_first_try():
    pr = rand_problem(6, K=2.0)
    w1 = solve_weights(pr)
    w2, log = solve_with_escalation(pr)
    assert len(log) == 1 and np.array_equal(w1.tau, w2.tau) and w2.K_used == 2.0


def test_escalation_cap_forced_infeasible():
    D = np.ones((10, 2))
    pr = BalanceProblem(D, np.array([100.0, 100.0]), 1.0, cap=0.01)
    with pytest.raises(StillInfeasible) as info:
        solve_with_escalation(pr, escalation=Escalation(1.5, 5))
    log = info.value.log
    assert len(log) == 5
    assert all(e["status"] == "infeasible" for e in log)
    res = [e["residual"] for e in log]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))
    assert [e["K"] for e in log] == pytest.approx([1.5 ** k for k in range(5)])


def test_escalation_two_attempts():
    # [DERIVED] scale the contrast until the critical K is 3.5 (between 2.75 and 4.125)
    rng = np.random.default_rng(7)
    D = rng.normal(size=(20, 5)) + 0.3
    base = rng.uniform(0.5, 1.0, 5)
    unit = math.sqrt(math.log(5) / 20)
    lo, hi = 0.1, 100.0
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        r, _ = min_residual_under_cap(BalanceProblem(D, mid * base, 1.0))
        lo, hi = (mid, hi) if r < 3.5 * unit else (lo, mid)
    pr = BalanceProblem(D, lo * base, 2.75)
    w, log = solve_with_escalation(pr)
    assert len(log) == 2 and w.K_used == pytest.approx(4.125)
    assert log[0]["status"] == "infeasible" and w.ok


def test_invalid_problem():
    with pytest.raises(ValueError):
        BalanceProblem(np.ones((3, 2)), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        BalanceProblem(np.ones((3, 2)), np.ones(2), 0.0)
    with pytest.raises(ValueError):
        solve_with_escalation(rand_problem(0), escalation=Escalation(1.0))
