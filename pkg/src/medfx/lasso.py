"""L1-penalized least squares: single fits, cross-validated paths, many responses.

Conventions
-----------
The objective is ``(1/(2n)) * ||y - b0 - X b||^2 + lam * sum_j w_j |b_j|`` with an
unpenalized intercept. With ``standardize=True`` columns are centered and
scaled to unit (population) SD before fitting, so ``w_j`` is the column SD and
``lam`` lives on the standardized scale (the glmnet convention). Coefficients
are always returned on the original scale. ``lam`` here equals the value in an
unnormalized ``sum of squares + lam' * ||b||_1`` objective divided by ``2n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _cd
from .errors import DegenerateColumn, NotConverged


@dataclass(frozen=True)
class LassoOptions:
    tol: float = 1e-7
    max_passes: int = 100_000
    standardize: bool = True
    fit_intercept: bool = True
    folds: int = 10
    grid_size: int = 100
    min_ratio: float = 1e-3
    seed: int = 0
    # stop a path early once the fit saturates (glmnet's rule)
    path_stop: bool = True
    # CV fold paths only rank lambdas: converge when the largest
    # deviance-scaled step G_jj * delta**2 / yy drops below this (glmnet's thresh)
    cv_thresh: float = 1e-7
    # CV paths stop once at least this many grid points past the running
    # minimum and above min + 1 SE (0 disables)
    cv_patience: int = 5
    cv_need_se: bool = True


@dataclass(frozen=True, eq=False)
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    active_set: np.ndarray
    n_iter: int
    residuals: np.ndarray
    converged: bool
    x_mean: np.ndarray = field(repr=False)
    x_scale: np.ndarray = field(repr=False)
    y_mean: float = field(repr=False)
    design: np.ndarray | None = field(default=None, repr=False)
    response: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.residuals.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X[:, self.active_set] @ self.coef[self.active_set]

    def standardized_coef(self) -> np.ndarray:
        return self.coef * self.x_scale

    def kkt_residual(self) -> float:
        """Largest KKT violation on the standardized scale (needs the training data)."""
        Xs = (self.design - self.x_mean) / self.x_scale
        g = Xs.T @ self.residuals / self.n
        b = self.standardized_coef()
        act = b != 0
        viol = np.zeros_like(g)
        viol[act] = np.abs(g[act] - self.lam * np.sign(b[act]))
        viol[~act] = np.maximum(np.abs(g[~act]) - self.lam, 0.0)
        return float(viol.max(initial=0.0))

    def objective(self) -> float:
        b = self.standardized_coef()
        return 0.5 * float(self.residuals @ self.residuals) / self.n + self.lam * float(np.abs(b).sum())


@dataclass(frozen=True, eq=False)
class CvResult:
    lambda_grid: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    folds: int
    seed: int
    index_min: int
    index_1se: int


@dataclass(frozen=True)
class _Standardized:
    n: int
    mean: np.ndarray
    scale: np.ndarray
    G: np.ndarray


def _standardize(S: np.ndarray, sx: np.ndarray, n: int, opts: LassoOptions) -> _Standardized:
    mean = sx / n if opts.fit_intercept else np.zeros_like(sx)
    C = S / n - np.outer(mean, mean)
    var = np.diag(C).copy()
    if opts.standardize:
        bad = np.flatnonzero(~(var > 1e-14 * np.maximum(1.0, np.abs(np.diag(S) / n))))
        if bad.size:
            raise DegenerateColumn(int(bad[0]))
        scale = np.sqrt(var)
    else:
        scale = np.ones_like(var)
        bad = np.flatnonzero(~(var > 0))
        if bad.size:
            # an all-constant column can never enter; keep its diagonal positive
            var[bad] = 1.0
            C[bad, bad] = 1.0
    G = C / np.outer(scale, scale)
    if opts.standardize:
        np.fill_diagonal(G, 1.0)
    return _Standardized(n, mean, scale, G)


def _response_moments(st: _Standardized, sxy: np.ndarray, sy: float, syy: float, opts: LassoOptions):
    n = st.n
    ybar = sy / n if opts.fit_intercept else 0.0
    c = (sxy / n - st.mean * ybar) / st.scale
    yy = syy / n - ybar * ybar
    return c, max(yy, 0.0), ybar


def lambda_max(design, response, opts: LassoOptions = LassoOptions()) -> float:
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    st = _standardize(X.T @ X, X.sum(0), X.shape[0], opts)
    c, _, _ = _response_moments(st, X.T @ y, y.sum(), y @ y, opts)
    return float(np.abs(c).max(initial=0.0))


def lambda_grid(lmax: float, opts: LassoOptions) -> np.ndarray:
    if lmax <= 0:
        return np.zeros(1)
    return lmax * np.logspace(0.0, math.log10(opts.min_ratio), opts.grid_size)


def _to_original(beta_s: np.ndarray, st: _Standardized, ybar: float):
    coef = beta_s / st.scale
    return coef, ybar - float(st.mean @ coef)


def _make_fit(X, y, st, beta_s, ybar, lam, passes, converged) -> LassoFit:
    coef, b0 = _to_original(beta_s, st, ybar)
    active = np.flatnonzero(coef)
    resid = y - b0 - X[:, active] @ coef[active]
    return LassoFit(coef=coef, intercept=b0, lam=float(lam), active_set=active, n_iter=int(passes),
                    residuals=resid, converged=bool(converged), x_mean=st.mean, x_scale=st.scale,
                    y_mean=float(ybar), design=X, response=y)


def _dfmax(n: int, d: int) -> int:
    return max(1, min(d, n - 1))


def lasso_fit(design, response, lam: float, opts: LassoOptions = LassoOptions(),
              warm_start: np.ndarray | None = None) -> LassoFit:
    """Solve the lasso at a single ``lam``.

    ``warm_start`` is a standardized-scale starting coefficient vector.
    Raises NotConverged (with the partial fit attached) if ``max_passes`` is hit.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("lasso_fit needs at least two rows")
    if lam < 0 or not np.isfinite(lam):
        raise ValueError("lambda must be a finite non-negative number")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite input")
    st = _standardize(X.T @ X, X.sum(0), n, opts)
    c, yy, ybar = _response_moments(st, X.T @ y, y.sum(), float(y @ y), opts)
    beta0 = np.zeros(d) if warm_start is None else np.asarray(warm_start, dtype=float)
    coefs, passes, conv, _ = _cd.path_gram(st.G, c, yy, np.array([float(lam)]), beta0, opts.tol ** 2,
                                           opts.max_passes, False, d)
    fit = _make_fit(X, y, st, coefs[0], ybar, lam, passes[0], conv[0])
    if not conv[0]:
        raise NotConverged(f"lasso did not converge in {opts.max_passes} passes at lambda={lam:g}", fit)
    return fit


def lasso_path(design, response, lambdas, opts: LassoOptions = LassoOptions()) -> list[LassoFit]:
    """Warm-started fits along a decreasing grid (no early stopping)."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, d = X.shape
    st = _standardize(X.T @ X, X.sum(0), n, opts)
    c, yy, ybar = _response_moments(st, X.T @ y, y.sum(), float(y @ y), opts)
    lambdas = np.asarray(lambdas, dtype=float)
    coefs, passes, conv, _ = _cd.path_gram(st.G, c, yy, lambdas, np.zeros(d), opts.tol ** 2,
                                           opts.max_passes, False, d)
    return [_make_fit(X, y, st, coefs[k], ybar, lambdas[k], passes[k], conv[k]) for k in range(lambdas.size)]


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n) % folds)


def _select(grid, cvm, cvsd):
    imin = int(np.argmin(cvm))
    ok = np.flatnonzero(cvm <= cvm[imin] + cvsd[imin])
    i1se = int(ok.min())  # grid is descending: smallest index = largest lambda
    return imin, i1se


def _cv_many(X: np.ndarray, R: np.ndarray, opts: LassoOptions, lam_override: float | None = None):
    """Cross-validated lasso for every column of R against the same design X.

    Fold Gram matrices are built once and shared by all responses. Returns a
    list of (CvResult | None, LassoFit) pairs, one per response column.
    """
    n, d = X.shape
    r = R.shape[1]
    if opts.folds < 2 or n < opts.folds:
        raise ValueError(f"need folds >= 2 and n >= folds (n={n}, folds={opts.folds})")
    if not (np.isfinite(X).all() and np.isfinite(R).all()):
        raise ValueError("non-finite input")
    X = np.ascontiguousarray(X)
    R = np.ascontiguousarray(R)
    S = X.T @ X
    sx = X.sum(0)
    Sxy = X.T @ R
    sy = R.sum(0)
    syy = np.einsum("ij,ij->j", R, R)
    full = _standardize(S, sx, n, opts)
    moments = [_response_moments(full, Sxy[:, j], sy[j], syy[j], opts) for j in range(r)]
    dfmax = _dfmax(n, d)

    if lam_override is not None:
        out = []
        for j in range(r):
            c, yy, ybar = moments[j]
            coefs, passes, conv, _ = _cd.path_gram(full.G, c, yy, np.array([float(lam_override)]), np.zeros(d),
                                                   opts.tol ** 2, opts.max_passes, False, d)
            fit = _make_fit(X, R[:, j], full, coefs[0], ybar, lam_override, passes[0], conv[0])
            if not conv[0]:
                raise NotConverged(f"lasso did not converge for response {j}", fit)
            out.append((None, fit))
        return out

    lmax = np.array([float(np.abs(m[0]).max(initial=0.0)) if m[1] > 0 else 0.0 for m in moments])
    L = opts.grid_size
    ratios = np.logspace(0.0, math.log10(opts.min_ratio), L)
    grids = np.outer(lmax, ratios)

    K = opts.folds
    fid = fold_ids(n, K, opts.seed)
    order = np.argsort(fid, kind="stable").astype(np.int64)
    starts = np.searchsorted(fid[order], np.arange(K + 1)).astype(np.int64)
    Gs = np.empty((K, d, d))
    cs = np.empty((K, r, d))
    yys = np.empty((K, r))
    ybars = np.empty((K, r))
    means = np.empty((K, d))
    scales = np.empty((K, d))
    dfmaxs = np.empty(K, dtype=np.int64)
    for k in range(K):
        val = order[starts[k]:starts[k + 1]]
        Xv = X[val]
        Rv = R[val]
        nv = val.size
        st = _standardize(S - Xv.T @ Xv, sx - Xv.sum(0), n - nv, opts)
        Gs[k] = st.G
        means[k] = st.mean
        scales[k] = st.scale
        dfmaxs[k] = _dfmax(n - nv, d)
        ntr = n - nv
        ybar = (sy - Rv.sum(0)) / ntr if opts.fit_intercept else np.zeros(r)
        ybars[k] = ybar
        cs[k] = (((Sxy - Xv.T @ Rv) / ntr).T - np.outer(ybar, st.mean)) / st.scale
        yys[k] = np.maximum((syy - np.einsum("ij,ij->j", Rv, Rv)) / ntr - ybar ** 2, 0.0)
    patience = opts.cv_patience if opts.path_stop else 0
    mse, n_eval, ok = _cd.cv_lockstep(Gs, cs, yys, ybars, means, scales, X, R, order, starts, grids,
                                      opts.cv_thresh, opts.max_passes, dfmaxs, patience, opts.cv_need_se)
    del Gs, cs
    if not ok.all():
        raise NotConverged(f"lasso did not converge in CV for response {int(np.flatnonzero(~ok)[0])}")

    w = np.diff(starts) / n
    out = []
    for j in range(r):
        c, yy, ybar = moments[j]
        if lmax[j] == 0.0:
            grid = np.zeros(1)
            cvraw = mse[j][:, :1]
        else:
            grid = grids[j, : n_eval[j]]
            cvraw = mse[j][:, : n_eval[j]]
        cvm = w @ cvraw
        cvsd = np.sqrt((w @ (cvraw - cvm) ** 2) / (K - 1))
        imin, i1se = _select(grid, cvm, cvsd)
        cv = CvResult(lambda_grid=grid, cv_mean=cvm, cv_se=cvsd, lambda_min=float(grid[imin]),
                      lambda_1se=float(grid[i1se]), folds=K, seed=opts.seed, index_min=imin, index_1se=i1se)
        if lmax[j] == 0.0:
            fit = _make_fit(X, R[:, j], full, np.zeros(d), ybar, 0.0, 0, True)
        else:
            coefs, passes, conv, _ = _cd.path_gram(full.G, c, yy, grid[: i1se + 1], np.zeros(d), opts.tol ** 2,
                                                   opts.max_passes, False, dfmax)
            fit = _make_fit(X, R[:, j], full, coefs[i1se], ybar, grid[i1se], passes[: i1se + 1].sum(),
                            conv[: i1se + 1].all())
            if not fit.converged:
                raise NotConverged(f"lasso did not converge on the full data for response {j}", fit)
        out.append((cv, fit))
    return out


def lasso_cv(design, response, opts: LassoOptions = LassoOptions()) -> tuple[CvResult, LassoFit]:
    """K-fold CV over a log-spaced grid from lambda_max down to ``min_ratio * lambda_max``.

    Returns the CV curve and the full-data fit at the one-standard-error lambda.
    Folds whose path saturates are extended with their last fit; the curve is
    truncated once it has clearly passed its minimum (``cv_patience``).
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    return _cv_many(X, y[:, None], opts)[0]


@dataclass(frozen=True, eq=False)
class MultiFit:
    """Row k of ``B`` regresses mediator column k on the design."""

    B: np.ndarray
    intercepts: np.ndarray
    fits: tuple[LassoFit, ...]
    cv: tuple[CvResult | None, ...]


def multiresponse_fit(X, M, opts: LassoOptions = LassoOptions(), lam_override: float | None = None) -> MultiFit:
    X = np.asarray(X, dtype=float)
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty design")
    res = _cv_many(X, M, opts, lam_override)
    B = np.vstack([f.coef for _, f in res])
    b0 = np.array([f.intercept for _, f in res])
    return MultiFit(B=B, intercepts=b0, fits=tuple(f for _, f in res), cv=tuple(c for c, _ in res))


def hard_threshold(fit: LassoFit, level: float) -> LassoFit:
    """Zero out coefficients with ``|coef_j| < level``; refresh intercept and residuals."""
    if level < 0:
        raise ValueError("threshold level must be non-negative")
    if level == 0:
        return fit
    coef = np.where(np.abs(fit.coef) < level, 0.0, fit.coef)
    active = np.flatnonzero(coef)
    if fit.design is None:
        raise ValueError("fit does not carry its training data")
    intercept = fit.y_mean - float(fit.x_mean @ coef)
    resid = fit.response - intercept - fit.design[:, active] @ coef[active]
    return replace(fit, coef=coef, intercept=intercept, active_set=active, residuals=resid)
