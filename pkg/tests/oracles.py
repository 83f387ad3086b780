"""Independent reference computations used by the tests.

None of these share code with the package beyond the data containers.
"""

from __future__ import annotations

import itertools

import numpy as np


def qp_enumerate(D, c, slack, cap, tol=1e-10):
    """Exact minimum of ||tau||^2 s.t. |c - D'tau|_inf <= slack, |tau|_inf <= cap.

    Brute force over all assignments of each constraint to {inactive, lower,
    upper}: the optimum is the min-norm point of the affine hull of its face,
    so it is the best feasible candidate. Returns (objective, tau) or None.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    n, d = D.shape
    rows = [D[:, j] for j in range(d)] + [np.eye(n)[i] for i in range(n)]
    lo = np.concatenate([c - slack, np.full(n, -cap)])
    hi = np.concatenate([c + slack, np.full(n, cap)])
    best = None
    for states in itertools.product((0, 1, 2), repeat=n + d):
        act = [k for k, s in enumerate(states) if s]
        if act:
            G = np.array([rows[k] for k in act])
            h = np.array([lo[k] if states[k] == 1 else hi[k] for k in act])
            tau = np.linalg.lstsq(G, h, rcond=None)[0]
            if np.abs(G @ tau - h).max() > 1e-9:
                continue
        else:
            tau = np.zeros(n)
        vals = np.concatenate([D.T @ tau, tau])
        if np.all(vals >= lo - tol) and np.all(vals <= hi + tol):
            obj = float(tau @ tau)
            if best is None or obj < best[0]:
                best = (obj, tau)
    return best


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def ols_plugin(dataset, a_outcome=1, a_mediator=0):
    """Full-sample OLS plug-in of E[Y(a_outcome, M(a_mediator))] with a delta-method SE.

    Outcome: OLS of Y on (1, X, M) in arm a_outcome. Mediators: OLS of M on
    (1, X) in arm a_mediator. SE ignores the sampling error of Xbar, like the
    debiased estimator's variance.
    """
    X, M, A, Y = dataset.X, dataset.M, dataset.A, dataset.Y
    n, p = X.shape
    x_bar = X.mean(axis=0)
    t, m = A == a_outcome, A == a_mediator
    Wt = np.hstack([np.ones((t.sum(), 1)), X[t], M[t]])
    phi, *_ = np.linalg.lstsq(Wt, Y[t], rcond=None)
    Xc = np.hstack([np.ones((m.sum(), 1)), X[m]])
    coef, *_ = np.linalg.lstsq(Xc, M[m], rcond=None)  # (1 + p) x q
    xt = np.concatenate([[1.0], x_bar])
    m_hat = xt @ coef
    gamma = phi[1 + p:]
    a = np.concatenate([xt, m_hat])
    theta = float(a @ phi)
    r1 = Y[t] - Wt @ phi
    s1 = float(r1 @ r1) / (Wt.shape[0] - Wt.shape[1])
    r2 = (M[m] - Xc @ coef) @ gamma
    s2 = float(r2 @ r2) / (Xc.shape[0] - Xc.shape[1])
    v1 = s1 * float(a @ np.linalg.solve(Wt.T @ Wt, a))
    v2 = s2 * float(xt @ np.linalg.solve(Xc.T @ Xc, xt))
    return theta, float(np.sqrt(v1 + v2))


def true_counterfactual(params, x_bar, a_outcome, a_mediator):
    """alpha_a' + Xbar'beta_a' + (delta_a + B_a Xbar)'gamma_a' for the linear structural model."""
    alpha, beta, gamma = params.outcome(a_outcome)
    delta, B = params.mediator(a_mediator)
    return float(alpha + x_bar @ beta + (delta + B @ x_bar) @ gamma)


def lasso_reference(X, y, lam, standardize=True, intercept=True, sweeps=20000, tol=1e-13):
    """Plain cyclic coordinate descent on residuals for (1/2n)||y - b0 - Xb||^2 + lam ||b_std||_1.

    Penalty on the standardized scale (population SD), as glmnet. Returns (b0, b).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    mx = X.mean(0) if intercept else np.zeros(d)
    my = y.mean() if intercept else 0.0
    sx = np.sqrt(((X - mx) ** 2).mean(0)) if standardize else np.ones(d)
    Z = (X - mx) / sx
    r = y - my
    b = np.zeros(d)
    zz = (Z ** 2).mean(0)
    for _ in range(sweeps):
        delta = 0.0
        for j in range(d):
            old = b[j]
            rho = Z[:, j] @ r / n + zz[j] * old
            new = soft_threshold(rho, lam) / zz[j]
            if new != old:
                r -= Z[:, j] * (new - old)
                b[j] = new
                delta = max(delta, abs(new - old))
        if delta < tol:
            break
    coef = b / sx
    return my - mx @ coef, coef
