"""Debiased estimation of the mediation functional, plug-in baseline, and diagnostics.

Target, for outcome arm ``a1`` and mediator arm ``a0`` (default 1 and 0):

    theta = alpha_a1 + Xbar' beta_a1 + (delta_a0 + B_a0 Xbar)' gamma_a1

Fold 1 estimates the mediator regressions ``M ~ X`` on arm ``a0``; fold 2
estimates the outcome regression ``Y ~ (X, M)`` on arm ``a1`` and the
regression of ``M gamma_hat`` on ``X`` on arm ``a0``. Balancing weights on the
fold-2 rows correct both plug-in pieces.

Intercepts are carried as a constant column in the balancing designs, so the
first weight problem matches ``(1, Xbar, m_hat)`` and the second ``(1, Xbar)``.
The slack dimensions stay ``p + q`` and ``p``.
"""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .balance import (BalanceProblem, BalanceWeights, Escalation, SolverOptions, solve_weights,
                      solve_with_escalation)
from .data import MIN_CELL, Dataset, SplitPlan, TrueParams, split
from .errors import DimensionMismatch, GroupTooSmall, MedfxError, StillInfeasible
from .lasso import LassoFit, LassoOptions, MultiFit, hard_threshold, lasso_cv, lasso_fit, multiresponse_fit


# -- normal quantile -------------------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)


def norm_ppf(u: float) -> float:
    """Inverse standard normal CDF.

    Acklam's rational approximation (relative error ~1e-9) followed by one
    Halley step against ``erfc``, which brings it to near machine precision.
    """
    if not 0.0 < u < 1.0:
        if u == 0.0:
            return -math.inf
        if u == 1.0:
            return math.inf
        raise ValueError("probability must lie in [0, 1]")
    lo = 0.02425
    if u < lo:
        t = math.sqrt(-2.0 * math.log(u))
        x = (((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / \
            ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    elif u > 1.0 - lo:
        t = math.sqrt(-2.0 * math.log1p(-u))
        x = -(((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]) / \
            ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0)
    else:
        r = u - 0.5
        s = r * r
        x = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r / \
            (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - u
    g = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - g / (1.0 + 0.5 * x * g)


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return norm_ppf(0.5 + 0.5 * level)


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    K1: float = 2.75
    K2: float = 2.75
    level: float = 0.95
    seed: int = 0
    # None: off; a number: absolute level; "auto": half the selected lambda
    threshold_phi: float | str | None = None
    # fixed lambdas instead of CV, keys "phi", "B", "b"
    lambda_overrides: dict | None = None
    lasso: LassoOptions = LassoOptions()
    solver: SolverOptions = SolverOptions()
    escalation: Escalation = Escalation()
    escalate: bool = True
    # fit intercepts and balance a constant column; False follows the intercept-free model
    intercept: bool = True

    def __post_init__(self):
        if not (self.K1 > 0 and self.K2 > 0):
            raise ValueError("K1 and K2 must be positive")
        z_value(self.level)
        if self.lambda_overrides:
            unknown = set(self.lambda_overrides) - {"phi", "B", "b"}
            if unknown:
                raise ValueError(f"unknown lambda override keys: {sorted(unknown)}")


@contextlib.contextmanager
def _step(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except MedfxError as exc:
        if exc.step is None:
            exc.step = name
        raise
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# -- nuisance fits ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Everything Algorithm steps 1 and 3 produce; independent of K1, K2."""

    plan: SplitPlan
    a_outcome: int
    a_mediator: int
    x_bar: np.ndarray
    phi: LassoFit  # Y on (X, M), fold 2, arm a_outcome
    B: MultiFit  # M on X, fold 1, arm a_mediator
    b: LassoFit  # M gamma_hat on X, fold 2, arm a_mediator
    out_rows: np.ndarray  # dataset rows behind phi (and tau1)
    med_rows: np.ndarray  # dataset rows behind b (and tau2)
    timings: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.x_bar.size

    @property
    def alpha_hat(self) -> float:
        return self.phi.intercept

    @property
    def beta_hat(self) -> np.ndarray:
        return self.phi.coef[: self.p]

    @property
    def gamma_hat(self) -> np.ndarray:
        return self.phi.coef[self.p:]

    @property
    def m_hat(self) -> np.ndarray:
        """Estimated mediator mean at Xbar, ``delta_hat + B_hat Xbar``."""
        return self.B.intercepts + self.B.B @ self.x_bar

    @property
    def naive(self) -> float:
        return float(self.alpha_hat + self.x_bar @ self.beta_hat + self.m_hat @ self.gamma_hat)


def _cell_opts(opts: LassoOptions, n_rows: int) -> LassoOptions:
    # small cells: one row per fold rather than failing
    return opts if n_rows >= opts.folds else replace(opts, folds=max(2, n_rows))


def _fit_one(X, y, opts, lam):
    if lam is None:
        return lasso_cv(X, y, _cell_opts(opts, X.shape[0]))[1]
    return lasso_fit(X, y, float(lam), opts)


def fit_nuisance(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(), plan: SplitPlan | None = None,
                 a_outcome: int = 1, a_mediator: int = 0, mediator_fit: MultiFit | None = None) -> NuisanceFits:
    """Steps 1 and 3. ``mediator_fit`` reuses mediator regressions fit on the same plan and arm."""
    if a_outcome not in (0, 1) or a_mediator not in (0, 1):
        raise ValueError("treatment arms must be 0 or 1")
    timings: dict = {}
    with _step("split", timings):
        if plan is None:
            plan, _ = split(dataset, cfg.seed)
        _check_plan(dataset, plan)
    over = cfg.lambda_overrides or {}
    opts = replace(cfg.lasso, seed=cfg.seed, fit_intercept=cfg.intercept)
    X, M, A, Y = dataset.X, dataset.M, dataset.A, dataset.Y
    x_bar = X.mean(axis=0)
    f1, f2 = plan.fold1, plan.fold2
    med1 = f1[A[f1] == a_mediator]
    out2 = f2[A[f2] == a_outcome]
    med2 = f2[A[f2] == a_mediator]
    for rows, where, g in ((med1, "fold 1", a_mediator), (out2, "fold 2", a_outcome), (med2, "fold 2", a_mediator)):
        if rows.size < MIN_CELL:
            err = GroupTooSmall(f"{where} has {rows.size} rows with A={g}; need at least {MIN_CELL}",
                                group=g, size=int(rows.size))
            err.step = "split"
            raise err
    with _step("mediator_regressions", timings):
        B = mediator_fit if mediator_fit is not None else multiresponse_fit(X[med1], M[med1], _cell_opts(opts, med1.size),
                                                                              over.get("B"))
    with _step("outcome_regression", timings):
        W2 = np.hstack([X[out2], M[out2]])
        phi = _fit_one(W2, Y[out2], opts, over.get("phi"))
        if cfg.threshold_phi is not None:
            level = phi.lam / 2 if cfg.threshold_phi == "auto" else float(cfg.threshold_phi)
            phi = hard_threshold(phi, level)
    p = dataset.p
    with _step("projection_regression", timings):
        r = M[med2] @ phi.coef[p:]
        b = _fit_one(X[med2], r, opts, over.get("b"))
    return NuisanceFits(plan=plan, a_outcome=a_outcome, a_mediator=a_mediator, x_bar=x_bar, phi=phi, B=B, b=b,
                        out_rows=out2, med_rows=med2, timings=timings)


def _check_plan(dataset: Dataset, plan: SplitPlan):
    both = np.concatenate([plan.fold1, plan.fold2])
    if both.size != dataset.n or not np.array_equal(np.sort(both), np.arange(dataset.n)):
        raise DimensionMismatch("split plan is not a partition of the dataset rows")


# -- estimate --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MediationEstimate:
    theta_hat: float
    theta_naive: float
    theta_01: float
    theta_02: float
    overlap_correction: float
    sigma_n2: float
    se: float
    ci: tuple[float, float]
    level: float
    tau1: BalanceWeights
    tau2: BalanceWeights
    fits: dict
    sigma1_hat2: float
    omega_hat2: float
    seed: int
    K_used: tuple[float, float]
    split: SplitPlan
    n: int
    a_outcome: int = 1
    a_mediator: int = 0
    escalations: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    # cross-fitting only: the two single-split estimates
    per_fold: tuple = ()
    heuristic_se: bool = False

    def summary(self) -> dict:
        return {
            "theta_hat": self.theta_hat, "theta_naive": self.theta_naive, "theta_01": self.theta_01,
            "theta_02": self.theta_02, "overlap_correction": self.overlap_correction, "se": self.se,
            "sigma_n2": self.sigma_n2, "ci": list(self.ci), "level": self.level, "K_used": list(self.K_used),
            "sigma1_hat2": self.sigma1_hat2, "omega_hat2": self.omega_hat2,
            "a_outcome": self.a_outcome, "a_mediator": self.a_mediator,
        }


def _solve(problem: BalanceProblem, cfg: PipelineConfig):
    if cfg.escalate:
        return solve_with_escalation(problem, cfg.solver, cfg.escalation)
    w = solve_weights(problem, cfg.solver)
    log = [{"attempt": 1, "K": problem.K, "status": w.status, "slack": w.slack,
            "residual": w.achieved_residual_inf if w.min_residual is None else w.min_residual}]
    if not w.ok:
        raise StillInfeasible(f"balancing weights not found at K={problem.K:g} ({w.status})", log)
    return w, log


def _designs(dataset: Dataset, x_bar, m_hat, o, m, intercept: bool):
    """(W_t, a, X_c, xbar) with a leading constant column when ``intercept``."""
    X, M = dataset.X, dataset.M
    Wt, a = np.hstack([X[o], M[o]]), np.concatenate([x_bar, m_hat])
    Xc, xb = X[m], np.asarray(x_bar, dtype=float)
    if intercept:
        Wt = np.hstack([np.ones((o.size, 1)), Wt])
        a = np.concatenate([[1.0], a])
        Xc = np.hstack([np.ones((m.size, 1)), Xc])
        xb = np.concatenate([[1.0], xb])
    return Wt, a, Xc, xb


def weight_problems(dataset: Dataset, nuis: NuisanceFits, K1: float, K2: float, intercept: bool = True):
    """The two balancing problems (slack dimensions p + q and p)."""
    Wt, a, Xc, xb = _designs(dataset, nuis.x_bar, nuis.m_hat, nuis.out_rows, nuis.med_rows, intercept)
    p, q = dataset.p, dataset.q
    return (BalanceProblem(Wt, a, K1, log_dim=p + q), BalanceProblem(Xc, xb, K2, log_dim=p))


def combine(dataset: Dataset, nuis: NuisanceFits, cfg: PipelineConfig = PipelineConfig(),
            weights: tuple | None = None) -> MediationEstimate:
    """Steps 2, 4 and 5 given the nuisance fits. ``weights`` may supply solved (tau1, tau2)."""
    timings = dict(nuis.timings)
    esc = {}
    if weights is None:
        pr1, pr2 = weight_problems(dataset, nuis, cfg.K1, cfg.K2, cfg.intercept)
        with _step("weights_tau1", timings):
            tau1, esc["tau1"] = _solve(pr1, cfg)
        with _step("weights_tau2", timings):
            tau2, esc["tau2"] = _solve(pr2, cfg)
    else:
        tau1, tau2 = weights
    Y = dataset.Y
    o, m = nuis.out_rows, nuis.med_rows
    gamma = nuis.gamma_hat
    m_hat = nuis.m_hat
    # step 2
    res1 = Y[o] - nuis.phi.predict(np.hstack([dataset.X[o], dataset.M[o]]))
    theta_01 = float(nuis.alpha_hat + nuis.x_bar @ nuis.beta_hat + m_hat @ gamma + tau1.tau @ res1)
    # step 4
    res2 = dataset.M[m] @ gamma - nuis.b.predict(dataset.X[m])
    theta_02 = float(nuis.b.intercept + nuis.x_bar @ nuis.b.coef + tau2.tau @ res2)
    overlap = float(m_hat @ gamma)
    theta_hat = theta_01 + theta_02 - overlap
    # variance
    sigma1 = float(res1 @ res1) / max(o.size - nuis.phi.active_set.size, 1)
    omega = float(res2 @ res2) / max(m.size - nuis.b.active_set.size, 1)
    var = sigma1 * float(tau1.tau @ tau1.tau) + omega * float(tau2.tau @ tau2.tau)
    n = dataset.n
    se = math.sqrt(var)
    z = z_value(cfg.level)
    warnings = []
    for key, log in esc.items():
        if len(log) > 1:
            warnings.append(f"{key}: K escalated to {log[-1]['K']:.6g} after {len(log) - 1} infeasible attempt(s)")
    if var <= 0:
        warnings.append("estimated variance is zero")
    return MediationEstimate(
        theta_hat=theta_hat, theta_naive=nuis.naive, theta_01=theta_01, theta_02=theta_02,
        overlap_correction=overlap, sigma_n2=n * var, se=se, ci=(theta_hat - z * se, theta_hat + z * se),
        level=cfg.level, tau1=tau1, tau2=tau2, fits={"phi": nuis.phi, "B0": nuis.B, "b": nuis.b},
        sigma1_hat2=sigma1, omega_hat2=omega, seed=cfg.seed, K_used=(tau1.K_used, tau2.K_used),
        split=nuis.plan, n=n, a_outcome=nuis.a_outcome, a_mediator=nuis.a_mediator, escalations=esc,
        timings=timings, warnings=tuple(warnings))


def estimate_debiased(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(),
                      plan: SplitPlan | None = None) -> MediationEstimate:
    """Single-split debiased estimate of ``Xbar'(beta_1 + B_0' gamma_1)`` (plus intercepts).

    The returned record also carries the paired plug-in value ``theta_naive``
    computed from the same fits.
    """
    return combine(dataset, fit_nuisance(dataset, cfg, plan), cfg)


def estimate_naive(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(),
                   plan: SplitPlan | None = None) -> float:
    """Plug-in estimate from the same fits and folds as :func:`estimate_debiased`."""
    return fit_nuisance(dataset, cfg, plan).naive


def estimate_both(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(),
                  plan: SplitPlan | None = None) -> tuple[MediationEstimate, float]:
    est = estimate_debiased(dataset, cfg, plan)
    return est, est.theta_naive


def crossfit_from(first: MediationEstimate, second: MediationEstimate, level: float) -> MediationEstimate:
    theta_01 = 0.5 * (first.theta_01 + second.theta_01)
    theta_02 = 0.5 * (first.theta_02 + second.theta_02)
    overlap = 0.5 * (first.overlap_correction + second.overlap_correction)
    theta = theta_01 + theta_02 - overlap
    se = 0.5 * math.sqrt(first.se ** 2 + second.se ** 2)
    z = z_value(level)
    timings = {k: first.timings.get(k, 0.0) + second.timings.get(k, 0.0)
               for k in set(first.timings) | set(second.timings)}
    return replace(first, theta_hat=theta, theta_naive=0.5 * (first.theta_naive + second.theta_naive),
                   theta_01=theta_01, theta_02=theta_02, overlap_correction=overlap, se=se,
                   sigma_n2=first.n * se ** 2, ci=(theta - z * se, theta + z * se), per_fold=(first, second),
                   heuristic_se=True, timings=timings,
                   warnings=first.warnings + second.warnings
                   + ("cross-fit standard error treats the two folds as independent (heuristic)",))


def estimate_crossfit(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(),
                      plan: SplitPlan | None = None, a_outcome: int = 1, a_mediator: int = 0) -> MediationEstimate:
    """Average of the two single-split estimates with the folds' roles reversed.

    ``tau1``, ``tau2`` and ``fits`` refer to the first pass; both passes are in
    ``per_fold``. The combined SE ``0.5 * sqrt(se_1^2 + se_2^2)`` is flagged heuristic.
    """
    if plan is None:
        plan, _ = split(dataset, cfg.seed)
    first = combine(dataset, fit_nuisance(dataset, cfg, plan, a_outcome, a_mediator), cfg)
    second = combine(dataset, fit_nuisance(dataset, cfg, plan.swapped(), a_outcome, a_mediator), cfg)
    return crossfit_from(first, second, cfg.level)


# -- simulation-only diagnostic --------------------------------------------------

@dataclass(frozen=True)
class BiasDiagnostic:
    delta_terms: tuple[float, float, float]  # weights-1 term, weights-2 term, overlap term
    V_n: float
    total_error: float
    theta_true: float
    theta_hat: float

    @property
    def bound(self) -> float:
        return float(sum(self.delta_terms))

    @property
    def remainder(self) -> float:
        return self.total_error - self.V_n

    def holds(self, rtol: float = 1e-10) -> bool:
        """``|error - V_n| <= bound``, allowing floating-point rounding."""
        scale = 1.0 + abs(self.theta_true) + abs(self.theta_hat) + abs(self.V_n)
        return abs(self.remainder) <= self.bound + rtol * scale


def bias_diagnostic(dataset: Dataset, truth: TrueParams, eps: np.ndarray, U: np.ndarray,
                    cfg: PipelineConfig = PipelineConfig(), estimate: MediationEstimate | None = None,
                    plan: SplitPlan | None = None) -> BiasDiagnostic:
    """Split the error of the debiased estimate into a noise term and three product bounds.

    ``eps`` (length n) and ``U`` (n x q) are the realized outcome and mediator
    shocks of the simulated sample. With ``m = delta_0 + B_0 Xbar``,

        theta_hat - theta = V_n + Delta_n,
        V_n = tau1' eps + tau2' U gamma_hat,
        |Delta_n| <= |a - W'tau1|_inf |phi_hat - phi|_1
                     + |Xbar - Xc'tau2|_inf |b_hat - b|_1
                     + |m_hat - m|_inf |gamma_hat - gamma|_1

    where every vector carries its intercept coordinate and ``b = (delta_0' gamma_hat, B_0' gamma_hat)``.
    """
    p, q = dataset.p, dataset.q
    if truth.p != p or truth.q != q:
        raise DimensionMismatch(f"truth has (p, q) = ({truth.p}, {truth.q}), data has ({p}, {q})")
    eps = np.asarray(eps, dtype=float).ravel()
    U = np.asarray(U, dtype=float)
    if eps.size != dataset.n or U.shape != (dataset.n, q):
        raise DimensionMismatch("noise realizations do not match the dataset")
    if estimate is None:
        estimate = estimate_debiased(dataset, cfg, plan)
    phi_fit, Bfit, bfit = estimate.fits["phi"], estimate.fits["B0"], estimate.fits["b"]
    a1, a0 = estimate.a_outcome, estimate.a_mediator
    alpha, beta, gamma = truth.outcome(a1)
    delta, Bt = truth.mediator(a0)
    plan = estimate.split
    A = dataset.A
    o = plan.fold2[A[plan.fold2] == a1]
    mrows = plan.fold2[A[plan.fold2] == a0]
    x_bar = dataset.X.mean(axis=0)
    g_hat = phi_fit.coef[p:]
    m_hat = Bfit.intercepts + Bfit.B @ x_bar
    m_true = delta + Bt @ x_bar

    Wt, a_vec, Xc, xb = _designs(dataset, x_bar, m_hat, o, mrows, cfg.intercept)
    phi_err = phi_fit.coef - np.concatenate([beta, gamma])
    b_err = bfit.coef - Bt.T @ g_hat
    if cfg.intercept:
        phi_err = np.concatenate([[phi_fit.intercept - alpha], phi_err])
        b_err = np.concatenate([[bfit.intercept - delta @ g_hat], b_err])
    t1 = float(np.abs(a_vec - Wt.T @ estimate.tau1.tau).max() * np.abs(phi_err).sum())

    t2 = float(np.abs(xb - Xc.T @ estimate.tau2.tau).max() * np.abs(b_err).sum())

    t3 = float(np.abs(m_hat - m_true).max(initial=0.0) * np.abs(g_hat - gamma).sum())

    V_n = float(estimate.tau1.tau @ eps[o] + estimate.tau2.tau @ (U[mrows] @ g_hat))
    theta_true = float(alpha + x_bar @ beta + m_true @ gamma)
    return BiasDiagnostic(delta_terms=(t1, t2, t3), V_n=V_n, total_error=estimate.theta_hat - theta_true,
                          theta_true=theta_true, theta_hat=estimate.theta_hat)
