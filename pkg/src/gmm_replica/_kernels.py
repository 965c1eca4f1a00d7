"""Compiled inner loops for the coordinate-descent solvers."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def soft_threshold(c, t):
    if c > t:
        return c - t
    if c < -t:
        return c + t
    return 0.0


@njit(cache=True, nogil=True)
def _quad_kkt(w, g, lam, ridge):
    worst = 0.0
    for j in range(w.shape[0]):
        if ridge:
            v = abs(g[j] + 2.0 * lam * w[j])
        elif w[j] != 0.0:
            v = abs(g[j] + lam * np.sign(w[j]))
        else:
            v = max(0.0, abs(g[j]) - lam)
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def _polish_active(sigma, b, zeta, lam, w):
    """Move towards the exact solution on the current active set.

    With the signs of the active coordinates frozen the objective is a
    convex quadratic; the step runs from ``w`` towards its minimiser and
    stops at the first sign change (that coordinate is set to zero), so
    the objective never increases.  Returns the step fraction in [0, 1].
    """
    p = w.shape[0]
    k = 0
    for j in range(p):
        if w[j] != 0.0:
            k += 1
    if k == 0:
        return 0.0
    idx = np.empty(k, dtype=np.int64)
    k = 0
    for j in range(p):
        if w[j] != 0.0:
            idx[k] = j
            k += 1
    a = np.empty((k, k))
    rhs = np.empty(k)
    for r in range(k):
        jr = idx[r]
        rhs[r] = b[jr] - lam * np.sign(w[jr])
        for c in range(k):
            a[r, c] = zeta * sigma[jr, idx[c]]
    sol = np.linalg.solve(a, rhs)
    t = 1.0
    hit = -1
    for r in range(k):
        old = w[idx[r]]
        if sol[r] * old <= 0.0:
            frac = old / (old - sol[r])
            if frac < t:
                t = frac
                hit = r
    for r in range(k):
        w[idx[r]] += t * (sol[r] - w[idx[r]])
    if hit >= 0:
        w[idx[hit]] = 0.0
    return t


@njit(cache=True, nogil=True)
def quad_lasso_cd(sigma, b, zeta, lam, w, ridge, change_tol, kkt_tol, max_sweeps, polish):
    """Minimise ``zeta/2 w'Sigma w - b'w + J(w)`` in place by cyclic CD.

    ``J`` is ``lam*|w|_1`` or, with ``ridge``, ``lam*|w|_2^2``.  Sweeps run
    in index order; after a full sweep with changes only the active
    coordinates are swept until they settle, then a full sweep verifies.
    With ``polish`` (L1 only) an active-set Newton step is taken once a
    sweep leaves the support unchanged.
    Returns ``(kkt_residual, sweeps, converged)``.
    """
    p = b.shape[0]
    g = zeta * (sigma @ w) - b
    sweeps = 0
    active_only = False
    wait = 2
    since_polish = 0
    while sweeps < max_sweeps:
        dmax = 0.0
        flips = 0
        for j in range(p):
            old = w[j]
            if active_only and old == 0.0:
                continue
            sjj = zeta * sigma[j, j]
            if ridge:
                new = (sjj * old - g[j]) / (sjj + 2.0 * lam)
            else:
                new = soft_threshold(sjj * old - g[j], lam) / sjj
            d = new - old
            if d != 0.0:
                if (old == 0.0) != (new == 0.0):
                    flips += 1
                w[j] = new
                for k in range(p):
                    g[k] += zeta * d * sigma[k, j]
                if abs(d) > dmax:
                    dmax = abs(d)
        sweeps += 1
        if dmax <= change_tol:
            if active_only:
                active_only = False
                continue
            g = zeta * (sigma @ w) - b
            kkt = _quad_kkt(w, g, lam, ridge)
            if kkt <= kkt_tol:
                return kkt, sweeps, True
        elif not ridge:
            active_only = True
            since_polish += 1
            if polish and flips == 0 and since_polish >= wait:
                since_polish = 0
                t = _polish_active(sigma, b, zeta, lam, w)
                g = zeta * (sigma @ w) - b
                # back off when the active set keeps changing
                wait = 2 if t == 1.0 else min(2 * wait, 64)
    g = zeta * (sigma @ w) - b
    return _quad_kkt(w, g, lam, ridge), sweeps, False


@njit(cache=True, nogil=True)
def quad_lasso_batch(sigma, bmat, zeta, lam, ridge, change_tol, kkt_tol, max_sweeps, polish):
    s, p = bmat.shape
    out = np.zeros((s, p))
    kkt = np.empty(s)
    ok = np.empty(s, dtype=np.bool_)
    for i in range(s):
        w = np.zeros(p)
        r, _, c = quad_lasso_cd(sigma, bmat[i].copy(), zeta, lam, w, ridge,
                                change_tol, kkt_tol, max_sweeps, polish)
        out[i] = w
        kkt[i] = r
        ok[i] = c
    return out, kkt, ok


# --------------------------------------------------------------------------
# L1-penalised logistic regression on scaled margins m = Z w, Z = y*x/sqrt(p)


@njit(cache=True, nogil=True)
def _expit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def _logistic_objective(m, w, lam):
    total = 0.0
    for i in range(m.shape[0]):
        u = m[i]
        total += max(-u, 0.0) + np.log1p(np.exp(-abs(u)))
    return total + lam * np.sum(np.abs(w))


@njit(cache=True, nogil=True)
def _l1_kkt(w, g, lam):
    worst = 0.0
    for j in range(w.shape[0]):
        if w[j] != 0.0:
            v = abs(g[j] + lam * np.sign(w[j]))
        else:
            v = max(0.0, abs(g[j]) - lam)
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def logistic_l1_fit(z, lam, w, tol, max_outer, max_inner, trace):
    """Proximal Newton with an inner cyclic CD on the quadratic model.

    Every accepted step passes an Armijo test on the true objective, so the
    recorded ``trace`` of objective values is non-increasing.
    Returns ``(objective, kkt, outer_iterations, converged, n_trace)``.
    """
    n, p = z.shape
    m = z @ w
    f = _logistic_objective(m, w, lam)
    s = np.empty(n)
    h = np.empty(n)
    a = np.empty(p)
    n_trace = 0
    if trace.shape[0] > 0:
        trace[0] = f
        n_trace = 1
    kkt = np.inf
    for outer in range(max_outer):
        for i in range(n):
            s[i] = _expit(-m[i])
            h[i] = max(s[i] * (1.0 - s[i]), 1e-12)
        g = -(z.T @ s)
        kkt = _l1_kkt(w, g, lam)
        if kkt <= tol:
            return f, kkt, outer, True, n_trace
        for j in range(p):
            acc = 0.0
            for i in range(n):
                acc += h[i] * z[i, j] * z[i, j]
            a[j] = acc
        d = np.zeros(p)
        zd = np.zeros(n)
        active_only = False
        for inner in range(max_inner):
            dmax = 0.0
            for j in range(p):
                wj = w[j] + d[j]
                if active_only and wj == 0.0:
                    continue
                if a[j] <= 0.0:
                    continue
                c = g[j]
                for i in range(n):
                    c += h[i] * z[i, j] * zd[i]
                new = soft_threshold(a[j] * wj - c, lam) / a[j]
                dd = new - wj
                if dd != 0.0:
                    d[j] += dd
                    for i in range(n):
                        zd[i] += dd * z[i, j]
                    step = abs(dd) * np.sqrt(a[j])
                    if step > dmax:
                        dmax = step
            if dmax <= 1e-3 * min(kkt, 1.0) or dmax < 1e-14:
                if active_only:
                    active_only = False
                else:
                    break
            else:
                active_only = True
        l1_old = np.sum(np.abs(w))
        delta = g @ d + lam * (np.sum(np.abs(w + d)) - l1_old)
        t = 1.0
        accepted = False
        w_new = w.copy()
        for _ in range(60):
            w_new = w + t * d
            m_new = m + t * zd
            f_new = _logistic_objective(m_new, w_new, lam)
            if f_new <= f + 1e-4 * t * delta:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no further decrease is representable in floating point
            return f, kkt, outer, kkt <= tol, n_trace
        w[:] = w_new
        m = z @ w
        f = _logistic_objective(m, w, lam)
        if n_trace < trace.shape[0]:
            trace[n_trace] = f
            n_trace += 1
    for i in range(n):
        s[i] = _expit(-m[i])
    g = -(z.T @ s)
    kkt = _l1_kkt(w, g, lam)
    return f, kkt, max_outer, kkt <= tol, n_trace
