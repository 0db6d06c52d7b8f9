"""Compiled inner loops of the sampler.

All random draws go through the numpy ``Generator`` passed in, so a kernel
call advances exactly the same bit-generator state that Python code sees.
The full series is stored as one array ``z = (latent x_{-T-1:0}, x_{1:n})``;
term ``m`` has target ``z[m + 2]`` and lags ``(z[m + 1], z[m])``.
"""
import math

import numpy as np
from numba import njit

TINY = 2.2250738585072014e-308
LOG_FLOOR = -745.0
LAMBDA_MAX = 1.0 - 2.0**-53


@njit(cache=True)
def gval(theta, degree, a, b):
    v = theta[0] + theta[1] * a + theta[2] * b
    if degree >= 2:
        v += theta[3] * a * b + theta[4] * a * a + theta[5] * b * b
    if degree >= 3:
        v += theta[6] * a * a * a + theta[7] * a * a * b + theta[8] * a * b * b + theta[9] * b * b * b
    return v


@njit(cache=True)
def features(a, b, degree, out):
    out[0] = 1.0
    out[1] = a
    out[2] = b
    if degree >= 2:
        out[3] = a * b
        out[4] = a * a
        out[5] = b * b
    if degree >= 3:
        out[6] = a * a * a
        out[7] = a * a * b
        out[8] = a * b * b
        out[9] = b * b * b


@njit(cache=True)
def residuals(z, theta, degree):
    M = z.size - 2
    r = np.empty(M)
    for m in range(M):
        r[m] = z[m + 2] - gval(theta, degree, z[m + 1], z[m])
    return r


@njit(cache=True)
def update_alloc(gen, lam, tau, alloc_d, slice_N, resid, b1, b2):
    """Slice counts N_i | d_i, then allocations d_i | N_i. Returns tau (maybe grown)."""
    M = alloc_d.size
    nmax = 0
    for i in range(M):
        g = 1 if lam >= 1.0 else gen.geometric(lam)
        slice_N[i] = alloc_d[i] + g - 1
        if slice_N[i] > nmax:
            nmax = slice_N[i]
    if nmax > tau.size:
        grown = np.empty(nmax)
        grown[: tau.size] = tau
        for j in range(tau.size, nmax):
            grown[j] = max(gen.gamma(b1, 1.0 / b2), TINY)
        tau = grown
    half_log_tau = np.empty(nmax)
    for k in range(nmax):
        half_log_tau[k] = 0.5 * math.log(tau[k])
    w = np.empty(nmax)
    for i in range(M):
        Ni = slice_N[i]
        r2 = resid[i] * resid[i]
        top = -np.inf
        for k in range(Ni):
            lw = half_log_tau[k] - 0.5 * tau[k] * r2
            w[k] = lw
            if lw > top:
                top = lw
        total = 0.0
        for k in range(Ni):
            x = w[k] - top
            w[k] = math.exp(x) if x > LOG_FLOOR else 0.0
            total += w[k]
        u = gen.random() * total
        pick = Ni - 1
        acc = 0.0
        for k in range(Ni):
            acc += w[k]
            if u < acc:
                pick = k
                break
        alloc_d[i] = pick + 1
    return tau


@njit(cache=True)
def update_tau(gen, alloc_d, slice_N, resid, b1, b2):
    nstar = 0
    for i in range(slice_N.size):
        if slice_N[i] > nstar:
            nstar = slice_N[i]
    nstar = max(nstar, 1)
    cnt = np.zeros(nstar)
    ss = np.zeros(nstar)
    for i in range(alloc_d.size):
        j = alloc_d[i] - 1
        cnt[j] += 1.0
        ss[j] += resid[i] * resid[i]
    tau = np.empty(nstar)
    for j in range(nstar):
        tau[j] = max(gen.gamma(b1 + 0.5 * cnt[j], 1.0 / (b2 + 0.5 * ss[j])), TINY)
    return tau


@njit(cache=True)
def update_lambda(gen, slice_N, alpha, beta):
    M = slice_N.size
    excess = 0.0
    for i in range(M):
        excess += slice_N[i] - 1
    lam = gen.beta(alpha + 2.0 * M, beta + excess)
    return min(max(lam, TINY), LAMBDA_MAX)


@njit(cache=True)
def _cholesky(A):
    P = A.shape[0]
    L = np.zeros((P, P))
    for j in range(P):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0) or not math.isfinite(s):
            return L, False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, P):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def theta_moments(z, alloc_d, tau, degree, jitter):
    """Precision matrix Q and right-hand side b of the Gaussian theta conditional."""
    P = 3 if degree == 1 else (6 if degree == 2 else 10)
    Q = np.zeros((P, P))
    b = np.zeros(P)
    phi = np.empty(P)
    M = z.size - 2
    for m in range(M):
        w = tau[alloc_d[m] - 1]
        features(z[m + 1], z[m], degree, phi)
        y = z[m + 2]
        for p in range(P):
            wp = w * phi[p]
            b[p] += wp * y
            for q in range(p + 1):
                Q[p, q] += wp * phi[q]
    for p in range(P):
        Q[p, p] += jitter
        for q in range(p):
            Q[q, p] = Q[p, q]
    return Q, b


@njit(cache=True)
def update_theta(gen, z, alloc_d, tau, degree, jitter, theta):
    """Draw theta in place from N(Q^-1 b, Q^-1). Returns False if Q is not PD."""
    Q, b = theta_moments(z, alloc_d, tau, degree, jitter)
    L, ok = _cholesky(Q)
    if not ok:
        return False
    P = b.size
    y = np.empty(P)
    for i in range(P):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    # Solve L^T theta = y + e so that theta = mean + L^-T e.
    for i in range(P):
        y[i] += gen.standard_normal()
    for i in range(P - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, P):
            s -= L[k, i] * theta[k]
        theta[i] = s / L[i, i]
    return True


@njit(cache=True)
def latent_delta(z, theta, degree, alloc_d, tau, j, value):
    """Change in log full conditional of z[j] when it moves to ``value``."""
    M = z.size - 2
    m0 = max(0, j - 2)
    m1 = min(j, M - 1)
    old = z[j]
    s_old = 0.0
    for m in range(m0, m1 + 1):
        r = z[m + 2] - gval(theta, degree, z[m + 1], z[m])
        s_old += tau[alloc_d[m] - 1] * r * r
    z[j] = value
    s_new = 0.0
    for m in range(m0, m1 + 1):
        r = z[m + 2] - gval(theta, degree, z[m + 1], z[m])
        s_new += tau[alloc_d[m] - 1] * r * r
    z[j] = old
    return -0.5 * (s_new - s_old)


@njit(cache=True)
def update_latent(gen, z, theta, degree, alloc_d, tau, lo, hi, scales, n_latent,
                  acc_batch, acc_total, prop_total, count_total):
    for j in range(n_latent):
        prop = z[j] + scales[j] * gen.standard_normal()
        if count_total:
            prop_total[j] += 1
        if not (prop > lo and prop < hi):
            continue
        delta = latent_delta(z, theta, degree, alloc_d, tau, j, prop)
        u = gen.random()
        if u == 0.0 or math.log(u) < delta:
            z[j] = prop
            acc_batch[j] += 1
            if count_total:
                acc_total[j] += 1


@njit(cache=True)
def run_sweeps(gen, lam, tau, alloc_d, slice_N, theta, z, n_latent, scales,
               acc_batch, acc_total, prop_total, sweep, n_sweeps,
               degree, lo, hi, alpha, beta, b1, b2, jitter,
               burn_in, adapt, target, batch, do_latent):
    """Run ``n_sweeps`` full sweeps in place. Returns (status, lam, tau, sweep)."""
    width = hi - lo
    for _ in range(n_sweeps):
        resid = residuals(z, theta, degree)
        tau = update_alloc(gen, lam, tau, alloc_d, slice_N, resid, b1, b2)
        tau = update_tau(gen, alloc_d, slice_N, resid, b1, b2)
        lam = update_lambda(gen, slice_N, alpha, beta)
        if not update_theta(gen, z, alloc_d, tau, degree, jitter, theta):
            return -1, lam, tau, sweep
        sweep += 1
        post = sweep > burn_in
        if do_latent:
            update_latent(gen, z, theta, degree, alloc_d, tau, lo, hi, scales, n_latent,
                          acc_batch, acc_total, prop_total, post)
            if adapt and not post and sweep % batch == 0:
                step = min(0.5, 1.0 / math.sqrt(sweep // batch))
                for j in range(n_latent):
                    if acc_batch[j] > target * batch:
                        scales[j] *= math.exp(step)
                    else:
                        scales[j] *= math.exp(-step)
                    scales[j] = min(max(scales[j], 1e-12), width)
                    acc_batch[j] = 0
    return 0, lam, tau, sweep
