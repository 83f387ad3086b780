"""Minimum-norm balancing weights.

Solves, for a design ``D`` (n_g x d) and a contrast vector ``c`` (length d),

    minimize ||tau||_2^2
    subject to ||c - D' tau||_inf <= slack,   ||tau||_inf <= cap

with ``slack = K * sqrt(log(d) / n_g)`` and ``cap = n_g ** (-2/3)``.

The solver is ADMM on the splitting ``z = A tau`` with ``A = [D'; I]``,
(OSQP's iteration with over-relaxation and adaptive step size), followed by
an active-set polish that returns a point feasible to ~1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .errors import SingularSigma, StillInfeasible

EPS_FEAS = 1e-8


@dataclass(frozen=True, eq=False)
class BalanceProblem:
    """One weight problem. ``log_dim`` overrides the d inside the slack formula."""

    design: np.ndarray
    contrast: np.ndarray
    K: float
    cap: float | None = None
    log_dim: int | None = None

    def __post_init__(self):
        D = np.asarray(self.design, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        c = np.asarray(self.contrast, dtype=float).ravel()
        if D.shape[1] != c.size:
            raise ValueError(f"design has {D.shape[1]} columns but contrast has length {c.size}")
        if D.shape[0] < 1 or c.size < 1:
            raise ValueError("empty balancing problem")
        if not (np.isfinite(D).all() and np.isfinite(c).all()):
            raise ValueError("non-finite input")
        if not self.K > 0:
            raise ValueError("K must be positive")
        object.__setattr__(self, "design", D)
        object.__setattr__(self, "contrast", c)
        if self.cap is None:
            object.__setattr__(self, "cap", float(D.shape[0]) ** (-2.0 / 3.0))
        elif not self.cap > 0:
            raise ValueError("cap must be positive")

    @property
    def n_g(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    @property
    def slack(self) -> float:
        return slack_for(self.K, self.log_dim or self.d, self.n_g)

    def with_K(self, K: float) -> "BalanceProblem":
        return BalanceProblem(self.design, self.contrast, K, self.cap, self.log_dim)

    def residual_inf(self, tau) -> float:
        return float(np.abs(self.contrast - self.design.T @ tau).max())


def slack_for(K: float, d: int, n_g: int) -> float:
    return K * math.sqrt(math.log(d) / n_g)


@dataclass(frozen=True)
class SolverOptions:
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_iter: int = 50_000
    alpha: float = 1.6
    sigma: float = 1e-6
    rho: float = 0.1
    check_every: int = 10
    adapt_every: int = 50
    polish: bool = True


@dataclass(frozen=True, eq=False)
class BalanceWeights:
    tau: np.ndarray
    achieved_residual_inf: float
    achieved_cap_inf: float
    objective: float
    K_used: float
    iterations: int
    status: str  # "optimal" | "infeasible" | "max_iter"
    slack: float
    cap: float
    polished: bool = False
    # smallest achievable ||c - D'tau||_inf under the cap; set when it was computed
    min_residual: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _weights(problem: BalanceProblem, tau, iters, status, polished=False, min_residual=None, **info):
    tau = np.asarray(tau, dtype=float)
    return BalanceWeights(tau=tau, achieved_residual_inf=problem.residual_inf(tau),
                          achieved_cap_inf=float(np.abs(tau).max()), objective=float(tau @ tau),
                          K_used=float(problem.K), iterations=int(iters), status=status, slack=problem.slack,
                          cap=float(problem.cap), polished=polished, min_residual=min_residual, info=info)


def _feasible(problem: BalanceProblem, tau, eps=EPS_FEAS) -> bool:
    return (problem.residual_inf(tau) <= problem.slack + eps
            and float(np.abs(tau).max()) <= problem.cap + eps)


def min_residual_under_cap(problem: BalanceProblem) -> tuple[float, np.ndarray]:
    """Smallest ||c - D'tau||_inf over ||tau||_inf <= cap (an LP)."""
    D, c, cap = problem.design, problem.contrast, problem.cap
    n, d = D.shape
    # variables (tau, r): minimize r s.t. -r <= c - D'tau <= r
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    Dt = D.T
    ones = np.ones((d, 1))
    A_ub = np.vstack([np.hstack([-Dt, -ones]), np.hstack([Dt, -ones])])
    b_ub = np.concatenate([-c, c])
    bounds = [(-cap, cap)] * n + [(0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"auxiliary LP failed: {res.message}")
    tau = np.clip(res.x[:n], -cap, cap)
    return problem.residual_inf(tau), tau


class _Admm:
    """ADMM on the scaled problem: t = tau / cap, rows of D'tau scaled by 1/slack."""

    def __init__(self, problem: BalanceProblem, opts: SolverOptions):
        self.p = problem
        self.o = opts
        s = problem.slack
        self.Ah = (problem.cap / s) * problem.design.T  # d x n
        ch = problem.contrast / s
        n, d = problem.n_g, problem.d
        self.n, self.d = n, d
        self.l = np.concatenate([ch - 1.0, -np.ones(n)])
        self.u = np.concatenate([ch + 1.0, np.ones(n)])
        self.AtA = self.Ah.T @ self.Ah
        self.rho = opts.rho
        self._factor()

    def _factor(self):
        n = self.n
        M = self.rho * self.AtA
        M[np.diag_indices(n)] += 2.0 + self.o.sigma + self.rho
        self.chol = sla.cho_factor(M, lower=True, check_finite=False)

    def A(self, x):
        return np.concatenate([self.Ah @ x, x])

    def At(self, v):
        return self.Ah.T @ v[: self.d] + v[self.d:]

    def run(self):
        o = self.o
        n, d = self.n, self.d
        x = np.zeros(n)
        z = np.clip(self.A(x), self.l, self.u)
        y = np.zeros(n + d)
        alpha, sigma = o.alpha, o.sigma
        status = "max_iter"
        it = 0
        for it in range(1, o.max_iter + 1):
            y_prev = y
            rhs = sigma * x + self.At(self.rho * z - y)
            xt = sla.cho_solve(self.chol, rhs, check_finite=False)
            zt = self.A(xt)
            x = alpha * xt + (1 - alpha) * x
            zh = alpha * zt + (1 - alpha) * z
            z_new = np.clip(zh + y / self.rho, self.l, self.u)
            y = y + self.rho * (zh - z_new)
            z = z_new
            if it % o.check_every and it != o.max_iter:
                continue
            Ax = self.A(x)
            Aty = self.At(y)
            r_prim = np.abs(Ax - z).max()
            r_dual = np.abs(2.0 * x + Aty).max()
            eps_p = o.tol_primal * (1.0 + max(np.abs(Ax).max(), np.abs(z).max()))
            eps_d = o.tol_dual * (1.0 + max(2.0 * np.abs(x).max(), np.abs(Aty).max()))
            if r_prim <= eps_p and r_dual <= eps_d:
                status = "optimal"
                break
            dy = y - y_prev
            ndy = np.abs(dy).max()
            if ndy > 1e-12:
                if (np.abs(self.At(dy)).max() <= 1e-7 * ndy
                        and self.u @ np.maximum(dy, 0) + self.l @ np.minimum(dy, 0) < -1e-7 * ndy):
                    status = "infeasible"
                    break
            if it % o.adapt_every == 0:
                num = r_prim / max(np.abs(Ax).max(), np.abs(z).max(), 1e-12)
                den = r_dual / max(2.0 * np.abs(x).max(), np.abs(Aty).max(), 1e-12)
                if den > 0 and num > 0:
                    new_rho = float(np.clip(self.rho * math.sqrt(num / den), 1e-6, 1e6))
                    if new_rho > 5 * self.rho or new_rho < self.rho / 5:
                        self.rho = new_rho
                        self._factor()
        return x, z, y, it, status

    def polish(self, x, z, y):
        """Solve the equality-constrained QP on the guessed active set."""
        n, d = self.n, self.d
        lo = (z - self.l < -y / self.rho) | (np.abs(z - self.l) < 1e-9)
        hi = (self.u - z < y / self.rho) | (np.abs(self.u - z) < 1e-9)
        lo_r, hi_r = lo[:d], hi[:d]
        lo_b, hi_b = lo[d:], hi[d:]
        fixed = lo_b | hi_b
        t = np.zeros(n)
        t[hi_b] = 1.0
        t[lo_b & ~hi_b] = -1.0
        free = ~fixed
        rows = np.flatnonzero(lo_r | hi_r)
        if rows.size and free.any():
            target = np.where(hi_r[rows], self.u[rows], self.l[rows])
            Af = self.Ah[np.ix_(rows, np.flatnonzero(free))]
            rhs = target - self.Ah[rows][:, fixed] @ t[fixed]
            sol, *_ = np.linalg.lstsq(Af, rhs, rcond=None)
            t[free] = sol
        return np.clip(t, -1.0, 1.0)


def _polish_loop(problem, admm, x, z, y):
    t = admm.polish(x, z, y)
    tau = t * problem.cap
    return tau if _feasible(problem, tau) else None


def solve_weights(problem: BalanceProblem, opts: SolverOptions = SolverOptions()) -> BalanceWeights:
    """Minimum-norm weights for one problem.

    ``status == "infeasible"`` comes with ``min_residual`` > slack, the value
    of the auxiliary LP ``min ||c - D'tau||_inf s.t. ||tau||_inf <= cap``.
    """
    s = problem.slack
    if np.abs(problem.contrast).max() <= s:
        return _weights(problem, np.zeros(problem.n_g), 0, "optimal")
    if s <= 0:
        # only exact balance would do; decide with the LP
        r, tau = min_residual_under_cap(problem)
        return _weights(problem, np.zeros(problem.n_g), 0, "infeasible", min_residual=r)

    admm = _Admm(problem, opts)
    x, z, y, iters, status = admm.run()
    if status == "infeasible" or status == "max_iter":
        r, tau_lp = min_residual_under_cap(problem)
        if r > s + EPS_FEAS:
            return _weights(problem, x * problem.cap, iters, "infeasible", min_residual=r)
        if status == "infeasible":
            # ADMM's certificate was premature; keep iterating from scratch with a tighter test
            status = "max_iter"
    tau = x * problem.cap
    if opts.polish:
        polished = _polish_loop(problem, admm, x, z, y)
        if polished is not None and polished @ polished <= tau @ tau + 1e-6 * max(tau @ tau, 1e-12) + 1e-12:
            return _weights(problem, polished, iters, "optimal", polished=True)
    if status == "optimal" and _feasible(problem, tau):
        return _weights(problem, tau, iters, "optimal")
    if status == "optimal":
        # converged to tolerance but not within EPS_FEAS: pull onto the box and retry a
        # tighter run once
        tight = SolverOptions(**{**opts.__dict__, "tol_primal": opts.tol_primal * 1e-3,
                                 "tol_dual": opts.tol_dual * 1e-3})
        admm = _Admm(problem, tight)
        x, z, y, more, st2 = admm.run()
        iters += more
        tau = x * problem.cap
        polished = _polish_loop(problem, admm, x, z, y) if opts.polish else None
        if polished is not None:
            return _weights(problem, polished, iters, "optimal", polished=True)
        if st2 == "optimal" and _feasible(problem, tau):
            return _weights(problem, tau, iters, "optimal")
    return _weights(problem, tau, iters, "max_iter")


@dataclass(frozen=True)
class Escalation:
    factor: float = 1.5
    max_attempts: int = 5


def solve_with_escalation(problem: BalanceProblem, opts: SolverOptions = SolverOptions(),
                          escalation: Escalation = Escalation()) -> tuple[BalanceWeights, list[dict]]:
    """Retry with K multiplied by ``factor`` until a solve is optimal.

    Raises StillInfeasible (carrying the attempt log) after ``max_attempts``.
    """
    if not escalation.factor > 1:
        raise ValueError("escalation factor must exceed 1")
    log: list[dict] = []
    K = problem.K
    for attempt in range(escalation.max_attempts):
        w = solve_weights(problem.with_K(K), opts)
        log.append({"attempt": attempt + 1, "K": K, "status": w.status, "slack": w.slack,
                    "residual": w.achieved_residual_inf if w.min_residual is None else w.min_residual})
        if w.ok:
            return w, log
        K *= escalation.factor
    raise StillInfeasible(f"balancing weights infeasible after {escalation.max_attempts} attempts "
                          f"(last K={log[-1]['K']:.4g})", log)


def oracle_weights(design, Sigma, mu, contrast) -> np.ndarray:
    """Population-moment weights ``tau_i = c' Sigma^{-1} (row_i - mu) / n_g``.

    Needs the true design covariance and mean, so it is only usable in
    simulation, as a feasible reference point for the weight problem.
    """
    D = np.asarray(design, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    try:
        cf = sla.cho_factor(Sigma, lower=True)
        v = sla.cho_solve(cf, np.asarray(contrast, dtype=float))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSigma(f"covariance is not positive definite: {exc}") from exc
    return (D - np.asarray(mu, dtype=float)) @ v / D.shape[0]
