"""Compiled inner loops for the penalized logistic solver.

The coordinate-descent kernel expects a Fortran-ordered, column-standardized
design matrix so each coordinate update walks contiguous memory. Kernels
release the GIL so candidate fits can run on a thread pool.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + np.exp(-t))
    e = np.exp(t)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _log1pexp(t):
    # log(1 + e^t), overflow-safe
    if t > 33.0:
        return t
    if t < -33.0:
        return np.exp(t)
    return np.log1p(np.exp(t))


@njit(cache=True, nogil=True, fastmath=True)
def penalized_objective(eta, y, beta, lam):
    """Mean negative Bernoulli log-likelihood plus lam * ||beta||_1."""
    n = eta.shape[0]
    s = 0.0
    for i in range(n):
        s += _log1pexp(eta[i]) - y[i] * eta[i]
    s /= n
    pen = 0.0
    for j in range(beta.shape[0]):
        pen += abs(beta[j])
    return s + lam * pen


@njit(cache=True, nogil=True, fastmath=True)
def _cd_sweep(X, w, res, beta_cd, denom, lam, inv_n, sw, b0_cd, active_only):
    """One cyclic pass of soft-threshold updates; returns (b0_cd, max_delta)."""
    n, p = X.shape
    max_delta = 0.0
    u = 0.0
    for i in range(n):
        u += w[i] * res[i]
    d0 = u * inv_n / sw
    if d0 != 0.0:
        b0_cd += d0
        for i in range(n):
            res[i] -= d0
        ad = abs(d0)
        if ad > max_delta:
            max_delta = ad
    for j in range(p):
        if active_only and beta_cd[j] == 0.0:
            continue
        dj = denom[j]
        if dj <= 0.0:
            continue
        rho = 0.0
        for i in range(n):
            rho += w[i] * X[i, j] * res[i]
        rho = rho * inv_n + dj * beta_cd[j]
        if rho > lam:
            bnew = (rho - lam) / dj
        elif rho < -lam:
            bnew = (rho + lam) / dj
        else:
            bnew = 0.0
        delta = bnew - beta_cd[j]
        if delta != 0.0:
            beta_cd[j] = bnew
            for i in range(n):
                res[i] -= X[i, j] * delta
            ad = abs(delta)
            if ad > max_delta:
                max_delta = ad
    return b0_cd, max_delta


@njit(cache=True, nogil=True)
def cd_lasso_logistic(X, y, lam, b0_init, beta_init, kkt_tol, max_outer, max_sweeps, w_min):
    """Proximal-Newton coordinate descent for the l1-penalized logistic loss.

    Each outer iteration forms the weighted-least-squares approximation at the
    current iterate (weights floored at ``w_min``), solves it by cyclic
    coordinate descent with soft-thresholding and active-set sweeps, and
    backtracks on the true penalized objective so accepted iterates are
    monotone non-increasing. The subproblem tolerance tightens with the KKT
    residual; the loop exits only once the true subgradient-optimality (KKT)
    residual drops to ``kkt_tol``.

    Returns (b0, beta, outer_iters, sweeps, converged, kkt, obj_hist, n_obj).
    """
    n, p = X.shape
    inv_n = 1.0 / n
    beta = beta_init.copy()
    b0 = b0_init

    eta = np.full(n, b0)
    for j in range(p):
        bj = beta[j]
        if bj != 0.0:
            for i in range(n):
                eta[i] += X[i, j] * bj

    prob = np.empty(n)
    w = np.empty(n)
    res = np.empty(n)
    eta_step = np.empty(n)
    eta_trial = np.empty(n)
    beta_cd = np.empty(p)
    beta_trial = np.empty(p)
    denom = np.empty(p)
    obj_hist = np.empty(max_outer + 1)

    obj = penalized_objective(eta, y, beta, lam)
    obj_hist[0] = obj
    n_obj = 1

    total_sweeps = 0
    outer_done = 0
    converged = False
    kkt = np.inf

    for outer in range(max_outer):
        for i in range(n):
            prob[i] = _sigmoid(eta[i])

        # KKT residual of the true objective at the current iterate
        g0 = 0.0
        for i in range(n):
            g0 += prob[i] - y[i]
        kkt = abs(g0 * inv_n)
        for j in range(p):
            g = 0.0
            for i in range(n):
                g += X[i, j] * (prob[i] - y[i])
            g *= inv_n
            if beta[j] > 0.0:
                v = abs(g + lam)
            elif beta[j] < 0.0:
                v = abs(g - lam)
            else:
                v = abs(g) - lam
                if v < 0.0:
                    v = 0.0
            if v > kkt:
                kkt = v
        if kkt <= kkt_tol:
            converged = True
            outer_done = outer
            break
        if total_sweeps >= max_sweeps:
            outer_done = outer
            break

        # inner tolerance tightens as the iterate approaches optimality
        cd_tol = 0.1 * kkt
        if cd_tol > 1e-4:
            cd_tol = 1e-4
        floor = 0.01 * kkt_tol
        if cd_tol < floor:
            cd_tol = floor

        # weighted quadratic model at the current iterate
        sw = 0.0
        for i in range(n):
            wi = prob[i] * (1.0 - prob[i])
            if wi < w_min:
                wi = w_min
            w[i] = wi
            sw += wi
            res[i] = (y[i] - prob[i]) / wi  # working response minus eta
        sw *= inv_n
        for j in range(p):
            d = 0.0
            for i in range(n):
                xij = X[i, j]
                d += w[i] * xij * xij
            denom[j] = d * inv_n

        # CD on the subproblem: full sweeps confirm, active-set sweeps iterate
        for j in range(p):
            beta_cd[j] = beta[j]
        b0_cd = b0
        while total_sweeps < max_sweeps:
            total_sweeps += 1
            b0_cd, max_delta = _cd_sweep(X, w, res, beta_cd, denom, lam, inv_n, sw, b0_cd, False)
            if max_delta < cd_tol:
                break
            while total_sweeps < max_sweeps:
                total_sweeps += 1
                b0_cd, max_delta = _cd_sweep(X, w, res, beta_cd, denom, lam, inv_n, sw, b0_cd, True)
                if max_delta < cd_tol:
                    break

        # step direction from the subproblem solution
        db0 = b0_cd - b0
        for i in range(n):
            eta_step[i] = (y[i] - prob[i]) / w[i] - res[i]  # eta_cd - eta
        for j in range(p):
            beta_cd[j] -= beta[j]  # now the coefficient direction

        # backtrack on the true objective; accepted iterates never increase it
        slack = 1e-12 * (1.0 + abs(obj))
        t = 1.0
        stalled = False
        while True:
            for i in range(n):
                eta_trial[i] = eta[i] + t * eta_step[i]
            for j in range(p):
                beta_trial[j] = beta[j] + t * beta_cd[j]
            obj_trial = penalized_objective(eta_trial, y, beta_trial, lam)
            if obj_trial <= obj + slack:
                break
            if t <= 1e-10:
                stalled = True
                break
            t *= 0.5
        if stalled:
            outer_done = outer + 1
            break
        b0 += t * db0
        for i in range(n):
            eta[i] = eta_trial[i]
        for j in range(p):
            beta[j] = beta_trial[j]
        obj = obj_trial
        obj_hist[n_obj] = obj
        n_obj += 1
        outer_done = outer + 1

    return b0, beta, outer_done, total_sweeps, converged, kkt, obj_hist, n_obj
