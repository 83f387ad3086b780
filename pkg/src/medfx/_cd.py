"""Numba kernels for covariance-update coordinate descent.

All kernels work on the standardized problem

    minimize  0.5 * b'Gb - c'b + lam * ||b||_1

where ``G`` is the (centered, scaled) Gram matrix divided by n and ``c`` the
matching cross-product with the response. ``grad = c - G b`` is kept exact on
the active set during inner sweeps and re-synchronised on all coordinates
before every full (KKT-checking) sweep.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _sync(G, grad, pending, act, n_act):
    # active entries of grad are already current; bring the rest up to date
    d = G.shape[0]
    for t in range(n_act):
        j = act[t]
        pj = pending[j]
        if pj != 0.0:
            row = G[j]
            for k in range(d):
                grad[k] -= row[k] * pj
            for s in range(n_act):
                k = act[s]
                grad[k] += row[k] * pj
            pending[j] = 0.0


@njit(cache=True)
def _full_sweep(G, beta, grad, lam, in_active, act, n_act):
    d = G.shape[0]
    dmax = 0.0
    for j in range(d):
        gjj = G[j, j]
        old = beta[j]
        new = _soft(grad[j] + gjj * old, lam) / gjj
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            row = G[j]
            for k in range(d):
                grad[k] -= row[k] * delta
            ch = gjj * delta * delta
            if ch > dmax:
                dmax = ch
            if not in_active[j]:
                in_active[j] = True
                act[n_act] = j
                n_act += 1
    return dmax, n_act


@njit(cache=True)
def _active_sweep(G, beta, grad, pending, lam, act, n_act):
    dmax = 0.0
    for t in range(n_act):
        j = act[t]
        gjj = G[j, j]
        old = beta[j]
        new = _soft(grad[j] + gjj * old, lam) / gjj
        delta = new - old
        if delta != 0.0:
            beta[j] = new
            pending[j] += delta
            row = G[j]
            for s in range(n_act):
                k = act[s]
                grad[k] -= row[k] * delta
            ch = gjj * delta * delta
            if ch > dmax:
                dmax = ch
    return dmax


@njit(cache=True)
def _solve_at(G, beta, grad, pending, in_active, act, n_act, lam, thresh, max_passes):
    """Coordinate descent at one lambda from the current state. Returns (n_act, passes, converged).

    Converges on the current active set first (cheap sweeps), then runs a full
    sweep as the KKT check; repeats while the full sweep moves anything.
    """
    npass = 0
    while True:
        while npass < max_passes and n_act > 0:
            dmax = _active_sweep(G, beta, grad, pending, lam, act, n_act)
            npass += 1
            if dmax < thresh:
                break
        _sync(G, grad, pending, act, n_act)
        if npass >= max_passes:
            return n_act, npass, False
        dmax, n_act = _full_sweep(G, beta, grad, lam, in_active, act, n_act)
        npass += 1
        if dmax < thresh:
            return n_act, npass, True


@njit(cache=True)
def _r2_nnz(c, yy, beta, grad, act, n_act):
    cb = 0.0
    bg = 0.0
    nnz = 0
    for t in range(n_act):
        j = act[t]
        cb += c[j] * beta[j]
        bg += beta[j] * grad[j]
        if beta[j] != 0.0:
            nnz += 1
    return 1.0 - (yy - cb - bg) / yy, nnz


@njit(cache=True)
def path_gram(G, c, yy, lambdas, beta0, thresh, max_passes, path_stop, dfmax):
    """Solve along a decreasing lambda grid with warm starts.

    Convergence: the largest ``G_jj * delta_j**2`` in a sweep falls below
    ``thresh`` (callers pass ``tol**2`` for a coefficient-change tolerance, or
    a deviance-relative value).

    Returns (coefs[L, d], passes[L], converged[L], n_fit). ``n_fit`` < L when
    ``path_stop`` truncated the path (deviance saturation or ``dfmax`` active
    coordinates); rows past ``n_fit`` are zero.
    """
    d = G.shape[0]
    L = lambdas.shape[0]
    beta = beta0.copy()
    grad = c.copy()
    for j in range(d):
        if beta[j] != 0.0:
            for k in range(d):
                grad[k] -= G[j, k] * beta[j]
    in_active = np.zeros(d, dtype=np.bool_)
    act = np.empty(d, dtype=np.int64)
    pending = np.zeros(d)
    n_act = 0
    for j in range(d):
        if beta[j] != 0.0:
            in_active[j] = True
            act[n_act] = j
            n_act += 1
    coefs = np.zeros((L, d))
    passes = np.zeros(L, dtype=np.int64)
    converged = np.ones(L, dtype=np.bool_)
    n_fit = L
    prev_r2 = 0.0
    for l in range(L):
        n_act, npass, ok = _solve_at(G, beta, grad, pending, in_active, act, n_act, lambdas[l],
                                     thresh, max_passes)
        coefs[l] = beta
        passes[l] = npass
        converged[l] = ok
        if not ok:
            n_fit = l + 1
            break
        if path_stop and yy > 0.0:
            r2, nnz = _r2_nnz(c, yy, beta, grad, act, n_act)
            if l > 0 and (r2 > 0.999 or r2 - prev_r2 < 1e-5 * r2 or nnz >= dfmax):
                n_fit = l + 1
                break
            prev_r2 = r2
    return coefs, passes, converged, n_fit


@njit(cache=True)
def cv_lockstep(Gs, cs, yys, ybars, means, scales, X, R, order, starts, grids, thresh_rel,
                max_passes, dfmaxs, patience, need_se):
    """Cross-validation curves for many responses, all folds advanced together.

    Gs[k] is the standardized training Gram of fold k; cs[k, j] and yys[k, j]
    the matching response moments. Validation rows of fold k are
    ``order[starts[k]:starts[k + 1]]``. A fold whose own path saturates keeps
    its last coefficients for the remaining lambdas. The path for response j
    stops at the first grid point at least ``patience`` points past the
    running CV minimum (and, with ``need_se``, whose CV mean exceeds that
    minimum plus its SE).

    Returns (mse[r, K, L], n_eval[r], ok[r]).
    """
    K = Gs.shape[0]
    d = Gs.shape[1]
    r = cs.shape[1]
    L = grids.shape[1]
    mse = np.zeros((r, K, L))
    n_eval = np.zeros(r, dtype=np.int64)
    ok_all = np.ones(r, dtype=np.bool_)
    beta = np.zeros((K, d))
    grad = np.zeros((K, d))
    pending = np.zeros((K, d))
    in_active = np.zeros((K, d), dtype=np.bool_)
    act = np.zeros((K, d), dtype=np.int64)
    n_act = np.zeros(K, dtype=np.int64)
    done = np.zeros(K, dtype=np.bool_)
    prev_r2 = np.zeros(K)
    nz = np.empty(d, dtype=np.int64)
    fold_w = np.empty(K)
    ntot = starts[K] - starts[0]
    for k in range(K):
        fold_w[k] = (starts[k + 1] - starts[k]) / ntot
    for j in range(r):
        beta[:, :] = 0.0
        pending[:, :] = 0.0
        in_active[:, :] = False
        n_act[:] = 0
        done[:] = False
        prev_r2[:] = 0.0
        for k in range(K):
            grad[k] = cs[k, j]
        best = np.inf
        best_se = 0.0
        ibest = 0
        for l in range(L):
            lam = grids[j, l]
            for k in range(K):
                if not done[k] and yys[k, j] > 0.0:
                    na, npass, ok = _solve_at(Gs[k], beta[k], grad[k], pending[k], in_active[k], act[k],
                                              n_act[k], lam, thresh_rel * yys[k, j], max_passes)
                    n_act[k] = na
                    if not ok:
                        ok_all[j] = False
                    r2, nnz = _r2_nnz(cs[k, j], yys[k, j], beta[k], grad[k], act[k], na)
                    if l > 0 and (r2 > 0.999 or r2 - prev_r2[k] < 1e-5 * r2 or nnz >= dfmaxs[k]):
                        done[k] = True
                    prev_r2[k] = r2
                # validation error on the original scale
                m = 0
                b0 = ybars[k, j]
                for t in range(n_act[k]):
                    jj = act[k, t]
                    if beta[k, jj] != 0.0:
                        nz[m] = jj
                        m += 1
                        b0 -= means[k, jj] * beta[k, jj] / scales[k, jj]
                s = 0.0
                for ii in range(starts[k], starts[k + 1]):
                    i = order[ii]
                    res = R[i, j] - b0
                    for t in range(m):
                        jj = nz[t]
                        res -= X[i, jj] * beta[k, jj] / scales[k, jj]
                    s += res * res
                mse[j, k, l] = s / (starts[k + 1] - starts[k])
            n_eval[j] = l + 1
            cvm = 0.0
            for k in range(K):
                cvm += fold_w[k] * mse[j, k, l]
            var = 0.0
            for k in range(K):
                var += fold_w[k] * (mse[j, k, l] - cvm) ** 2
            cvsd = np.sqrt(var / (K - 1))
            if cvm < best:
                best = cvm
                best_se = cvsd
                ibest = l
            if patience > 0 and l - ibest >= patience and (not need_se or cvm > best + best_se):
                break
            alldone = True
            for k in range(K):
                if not done[k]:
                    alldone = False
            if alldone:
                # every fold is frozen; the curve is flat from here on
                for ll in range(l + 1, L):
                    for k in range(K):
                        mse[j, k, ll] = mse[j, k, l]
                n_eval[j] = L
                break
    return mse, n_eval, ok_all


@njit(cache=True)
def val_sse(Xv, yv, coefs_orig, intercepts, n_fit):
    """Validation sum of squared errors for each of the first n_fit path points."""
    nv = Xv.shape[0]
    d = Xv.shape[1]
    out = np.empty(n_fit)
    nz = np.empty(d, dtype=np.int64)
    for l in range(n_fit):
        b = coefs_orig[l]
        m = 0
        for j in range(d):
            if b[j] != 0.0:
                nz[m] = j
                m += 1
        s = 0.0
        for i in range(nv):
            r = yv[i] - intercepts[l]
            for t in range(m):
                j = nz[t]
                r -= Xv[i, j] * b[j]
            s += r * r
        out[l] = s
    return out
