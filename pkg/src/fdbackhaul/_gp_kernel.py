"""Compiled successive-condensation solver for the weighted sum-rate problem.

Problem data: ``G[l, j]`` gain from transmitter ``j`` into receiver ``l``
(diagonal = desired signal), ``noise[l]``, weights ``w[l] >= 0`` and power
boxes. Variables are log-powers ``y``. Each outer iteration condenses every
SINR denominator into a monomial at the current point and minimizes the
resulting convex surrogate over the box with a projected Newton method.

An optional spectral-efficiency cap turns every per-link term
``log(I_l / D_l)`` into ``max(log(I_l / D_l), floor)`` with
``floor = -cap * ln 2``. The condensed term is then smoothed with a softplus
of width ``CAP_SMOOTHING``; the result is convex and still lies above the
capped objective, so each outer step cannot increase it beyond the small
smoothing gap (and the outer loop rejects any step that does).
"""
import math

import numpy as np
from numba import njit

FORM_PRODUCT = 0
FORM_SUM = 1
CAP_SMOOTHING = 0.01
NO_FLOOR = -np.inf


@njit(cache=True)
def cap_floor(cap):
    """Per-link floor of ``log(I / D)`` for a cap in bits/s/Hz (inf = none)."""
    if cap == np.inf:
        return NO_FLOOR
    return -cap * math.log(2.0)


@njit(cache=True)
def smooth_floor(u, floor):
    """Softplus approximation of ``max(u, floor)`` with its first and second
    derivatives; the identity when there is no floor."""
    if floor == NO_FLOOR:
        return u, 1.0, 0.0
    z = (u - floor) / CAP_SMOOTHING
    if z > 0.0:
        e = math.exp(-z)
        sig = 1.0 / (1.0 + e)
        sp = z + math.log1p(e)
    else:
        e = math.exp(z)
        sig = e / (1.0 + e)
        sp = math.log1p(e)
    return floor + CAP_SMOOTHING * sp, sig, sig * (1.0 - sig) / CAP_SMOOTHING


@njit(cache=True)
def interference(G, noise, p, l):
    s = noise[l]
    for j in range(p.shape[0]):
        if j != l:
            s += G[l, j] * p[j]
    return s


@njit(cache=True)
def true_objective(G, noise, w, p, form, floor):
    """Product form: ``sum_l w_l log(I_l / D_l)``; sum form:
    ``log sum_l (I_l / D_l)^{w_l}``. Both are minimized. Each log ratio is
    clipped below at ``floor``."""
    k = p.shape[0]
    if form == FORM_PRODUCT:
        total = 0.0
        for l in range(k):
            if w[l] > 0.0:
                i_l = interference(G, noise, p, l)
                total += w[l] * max(math.log(i_l) - math.log(i_l + G[l, l] * p[l]), floor)
        return total
    vals = np.empty(k)
    top = -np.inf
    for l in range(k):
        i_l = interference(G, noise, p, l)
        vals[l] = w[l] * max(math.log(i_l) - math.log(i_l + G[l, l] * p[l]), floor)
        if vals[l] > top:
            top = vals[l]
    s = 0.0
    for l in range(k):
        s += math.exp(vals[l] - top)
    return top + math.log(s)


@njit(cache=True)
def weighted_rate(G, noise, w, p, cap):
    """``sum_l w_l min(log2(1 + SINR_l), cap)``."""
    total = 0.0
    for l in range(p.shape[0]):
        if w[l] > 0.0:
            total += w[l] * min(math.log2(1.0 + G[l, l] * p[l] / interference(G, noise, p, l)), cap)
    return total


@njit(cache=True)
def condense(G, noise, p, alpha, const):
    """Fill ``alpha[l, j]`` (AM-GM exponents of ``D_l`` at ``p``) and ``const[l]``
    so that ``log m_l(y) = const[l] + alpha[l] . y``."""
    k = p.shape[0]
    for l in range(k):
        d = noise[l]
        for j in range(k):
            d += G[l, j] * p[j]
        c = math.log(d)
        for j in range(k):
            a = G[l, j] * p[j] / d
            alpha[l, j] = a
            c -= a * math.log(p[j])
        const[l] = c


@njit(cache=True)
def surrogate_value(G, noise, w, alpha, const, y, p, form, floor):
    """Condensed objective at ``y``; ``p`` is scratch space of length k."""
    k = y.shape[0]
    for j in range(k):
        p[j] = math.exp(y[j])
    total = 0.0
    top = -np.inf
    for sweep in range(1 if form == FORM_PRODUCT else 2):
        for l in range(k):
            lin = const[l]
            for j in range(k):
                lin += alpha[l, j] * y[j]
            h, _, _ = smooth_floor(math.log(interference(G, noise, p, l)) - lin, floor)
            phi = w[l] * h
            if form == FORM_PRODUCT:
                total += phi
            elif sweep == 0:
                top = max(top, phi)
            else:
                total += math.exp(phi - top)
    if form == FORM_PRODUCT:
        return total
    return top + math.log(total)


@njit(cache=True)
def surrogate_derivs(G, noise, w, alpha, const, y, form, floor, grad, hess, p, phi, pi, gphi,
                     dh, d2h):
    """Value, gradient and Hessian of the condensed objective.

    With ``phi_l = w_l h(log I_l(y) - log m_l(y))``, ``h`` the smoothed floor,
    the product form is ``sum_l phi_l`` and the sum form
    ``log sum_l exp(phi_l)``.
    """
    k = y.shape[0]
    for j in range(k):
        p[j] = math.exp(y[j])
        grad[j] = 0.0
        for m in range(k):
            hess[j, m] = 0.0
    top = -np.inf
    for l in range(k):
        lin = const[l]
        for j in range(k):
            lin += alpha[l, j] * y[j]
        h, dh[l], d2h[l] = smooth_floor(math.log(interference(G, noise, p, l)) - lin, floor)
        phi[l] = w[l] * h
        top = max(top, phi[l])
    if form == FORM_PRODUCT:
        value = 0.0
        for l in range(k):
            value += phi[l]
    else:
        tot = 0.0
        for l in range(k):
            tot += math.exp(phi[l] - top)
        value = top + math.log(tot)
    for l in range(k):
        s_l = 1.0 if form == FORM_PRODUCT else math.exp(phi[l] - value)
        if w[l] == 0.0 or s_l == 0.0:
            for j in range(k):
                gphi[l, j] = 0.0
            continue
        i_l = interference(G, noise, p, l)
        for j in range(k):
            pi[j] = 0.0 if j == l else G[l, j] * p[j] / i_l
        c = s_l * w[l] * dh[l]
        c2 = s_l * w[l] * d2h[l]
        for j in range(k):
            gu = pi[j] - alpha[l, j]
            gphi[l, j] = w[l] * dh[l] * gu
            grad[j] += s_l * gphi[l, j]
            hess[j, j] += c * pi[j]
            for m in range(k):
                hess[j, m] += c2 * gu * (pi[m] - alpha[l, m]) - c * pi[j] * pi[m]
    if form == FORM_SUM:
        for l in range(k):
            s_l = math.exp(phi[l] - value)
            for j in range(k):
                for m in range(k):
                    hess[j, m] += s_l * gphi[l, j] * gphi[l, m]
        for j in range(k):
            for m in range(k):
                hess[j, m] -= grad[j] * grad[m]
    return value


@njit(cache=True)
def _solve_free(H, g, free, d, idx, A, Lc, z):
    """Regularized Cholesky solve of ``H_FF d_F = -g_F``; zero elsewhere."""
    k = g.shape[0]
    n = 0
    for j in range(k):
        d[j] = 0.0
        if free[j]:
            idx[n] = j
            n += 1
    if n == 0:
        return
    scale = 0.0
    for a in range(n):
        scale = max(scale, abs(H[idx[a], idx[a]]))
    lam = 1e-12 * scale + 1e-300
    for _ in range(40):
        for a in range(n):
            for b in range(n):
                A[a, b] = H[idx[a], idx[b]]
            A[a, a] += lam
        ok = True
        for a in range(n):
            for b in range(a + 1):
                s = A[a, b]
                for c in range(b):
                    s -= Lc[a, c] * Lc[b, c]
                if a == b:
                    if s <= 0.0:
                        ok = False
                        break
                    Lc[a, a] = math.sqrt(s)
                else:
                    Lc[a, b] = s / Lc[b, b]
            if not ok:
                break
        if ok:
            break
        lam = lam * 100.0 + 1e-14
    for a in range(n):
        s = -g[idx[a]]
        for c in range(a):
            s -= Lc[a, c] * z[c]
        z[a] = s / Lc[a, a]
    for a in range(n - 1, -1, -1):
        s = z[a]
        for c in range(a + 1, n):
            s -= Lc[c, a] * z[c]
        z[a] = s / Lc[a, a]
    for a in range(n):
        d[idx[a]] = z[a]


@njit(cache=True)
def minimize_surrogate(G, noise, w, alpha, const, y, lo, hi, form, floor, tol, max_newton,
                       work, iwork):
    """Projected Newton over the box ``lo <= y <= hi``, updating ``y`` in place.

    ``work`` is float scratch of shape ``(4 * k + 10, k)``, ``iwork`` int
    scratch of length ``k``.
    """
    k = y.shape[0]
    grad = work[0]
    d = work[1]
    ynew = work[2]
    p = work[3]
    phi = work[4]
    pi = work[5]
    z = work[6]
    free = work[7]
    dh = work[8]
    d2h = work[9]
    hess = work[10:10 + k]
    gphi = work[10 + k:10 + 2 * k]
    A = work[10 + 2 * k:10 + 3 * k]
    Lc = work[10 + 3 * k:10 + 4 * k]
    for _ in range(max_newton):
        f = surrogate_derivs(G, noise, w, alpha, const, y, form, floor, grad, hess, p, phi, pi,
                             gphi, dh, d2h)
        pg = 0.0
        for j in range(k):
            at_lo = y[j] <= lo[j] + 1e-12 and grad[j] > 0.0
            at_hi = y[j] >= hi[j] - 1e-12 and grad[j] < 0.0
            free[j] = 0.0 if (at_lo or at_hi) else 1.0
            if free[j] > 0.0 and abs(grad[j]) > pg:
                pg = abs(grad[j])
        if pg < tol:
            break
        _solve_free(hess, grad, free, d, iwork, A, Lc, z)
        slope = 0.0
        for j in range(k):
            slope += grad[j] * d[j]
        if not slope < 0.0:
            for j in range(k):
                d[j] = -grad[j] * free[j]
        t = 1.0
        fnew = f
        accepted = False
        while t > 1e-14:
            decrease = 0.0
            for j in range(k):
                v = y[j] + t * d[j]
                if v < lo[j]:
                    v = lo[j]
                elif v > hi[j]:
                    v = hi[j]
                ynew[j] = v
                decrease += grad[j] * (v - y[j])
            fnew = surrogate_value(G, noise, w, alpha, const, ynew, p, form, floor)
            if fnew <= f + 1e-4 * decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        moved = 0.0
        for j in range(k):
            moved = max(moved, abs(ynew[j] - y[j]))
            y[j] = ynew[j]
        if moved < 1e-13 or f - fnew <= 1e-15 * (1.0 + abs(f)):
            break


@njit(cache=True)
def successive_gp(G, noise, w, pmin, pmax, p0, form, floor, rel_tol, max_iter, newton_tol,
                  history):
    """Successive condensation from ``p0``.

    ``history[i]`` receives the true objective after ``i`` iterations (NaN
    beyond the last). Returns ``(p, iterations, converged)``.
    """
    k = p0.shape[0]
    lo = np.empty(k)
    hi = np.empty(k)
    y = np.empty(k)
    ynew = np.empty(k)
    p = np.empty(k)
    pnew = np.empty(k)
    for j in range(k):
        lo[j] = math.log(pmin[j])
        hi[j] = math.log(pmax[j])
        y[j] = min(max(math.log(p0[j]), lo[j]), hi[j])
        p[j] = math.exp(y[j])
    for i in range(history.shape[0]):
        history[i] = np.nan
    t = true_objective(G, noise, w, p, form, floor)
    history[0] = t
    alpha = np.empty((k, k))
    const = np.empty(k)
    work = np.empty((4 * k + 10, k))
    iwork = np.empty(k, dtype=np.int64)
    converged = False
    iters = 0
    for it in range(max_iter):
        condense(G, noise, p, alpha, const)
        for j in range(k):
            ynew[j] = y[j]
        minimize_surrogate(G, noise, w, alpha, const, ynew, lo, hi, form, floor, newton_tol, 100,
                           work, iwork)
        for j in range(k):
            pnew[j] = math.exp(ynew[j])
        tnew = true_objective(G, noise, w, pnew, form, floor)
        iters = it + 1
        history[iters] = tnew
        if tnew > t:
            # The surrogate majorizes the objective, so this only happens at
            # rounding or smoothing-gap level; keep the previous iterate.
            converged = True
            break
        improvement = t - tnew
        for j in range(k):
            y[j] = ynew[j]
            p[j] = pnew[j]
        t = tnew
        if improvement <= rel_tol * max(abs(t), 1e-9):
            converged = True
            break
    return p, iters, converged


@njit(cache=True)
def zero_pass(G, noise, w, p, cap):
    """Switch off transmitters whose silence strictly raises the weighted rate."""
    best = weighted_rate(G, noise, w, p, cap)
    for j in range(p.shape[0]):
        keep = p[j]
        if keep == 0.0:
            continue
        p[j] = 0.0
        val = weighted_rate(G, noise, w, p, cap)
        if val > best:
            best = val
        else:
            p[j] = keep
    return best


@njit(cache=True)
def capped_rates(G, noise, p, bandwidth, cap, out):
    for l in range(p.shape[0]):
        sinr = G[l, l] * p[l] / interference(G, noise, p, l)
        out[l] = bandwidth * min(math.log2(1.0 + sinr), cap)


@njit(cache=True)
def search_start(G, noise, w, pmax, pmin, form, floor, levels_db):
    """Best point of the lattice ``pmax * 10^(levels_db / 10)`` (clipped to
    ``pmin``) under the true objective."""
    k = pmax.shape[0]
    n = levels_db.shape[0]
    scale = np.empty(n)
    for a in range(n):
        scale[a] = 10.0 ** (levels_db[a] / 10.0)
    digits = np.zeros(k, dtype=np.int64)
    p = np.empty(k)
    best = np.empty(k)
    best_val = np.inf
    total = n ** k
    for _ in range(total):
        for j in range(k):
            p[j] = max(pmax[j] * scale[digits[j]], pmin[j])
        val = true_objective(G, noise, w, p, form, floor)
        if val < best_val:
            best_val = val
            for j in range(k):
                best[j] = p[j]
        j = 0
        while j < k:
            digits[j] += 1
            if digits[j] < n:
                break
            digits[j] = 0
            j += 1
    return best


SEARCH_LEVELS_DB = np.array([-3.0103, 0.0, -10.0, -20.0, -30.0, -45.0, -60.0])


@njit(cache=True)
def optimize(G, noise, weights, pmax, init_kind, pmin_fraction, form, cap, rel_tol, max_iter,
             newton_tol, history):
    """Normalize weights, initialize, run successive GP and the zero pass.

    ``init_kind`` 0 = half of max power, 1 = geometric midpoint in dB of the
    box, 2 = best point of a coarse dB lattice (``SEARCH_LEVELS_DB``, which
    includes half power). ``cap`` is the spectral-efficiency cap in bits/s/Hz
    (inf = none).
    """
    k = pmax.shape[0]
    wmax = 0.0
    for l in range(k):
        wmax = max(wmax, weights[l])
    w = np.empty(k)
    for l in range(k):
        w[l] = weights[l] / wmax if wmax > 0.0 else 1.0
    pmin = pmax * pmin_fraction
    floor = cap_floor(cap)
    if init_kind == 2:
        p0 = search_start(G, noise, w, pmax, pmin, form, floor, SEARCH_LEVELS_DB)
    else:
        p0 = np.empty(k)
        for j in range(k):
            p0[j] = 0.5 * pmax[j] if init_kind == 0 else math.sqrt(pmin[j] * pmax[j])
    p, iters, converged = successive_gp(G, noise, w, pmin, pmax, p0, form, floor,
                                        rel_tol, max_iter, newton_tol, history)
    if form == FORM_PRODUCT:
        zero_pass(G, noise, w, p, cap)
    return p, iters, converged
