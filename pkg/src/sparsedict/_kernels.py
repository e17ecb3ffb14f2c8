"""Compiled per-column loops behind :mod:`sparsedict.solvers`.

All kernels share one calling convention. ``Dt`` is the transposed
dictionary (``n x m``), ``Pt`` holds one target per row and ``Xt`` one
starting code per row, overwritten with the result. ``iters`` and ``conv``
receive per-row iteration counts and convergence flags; ``hist`` (length 0
to disable) receives the objective of row 0 after every iteration.

A kernel returns -1 on success, or the row index whose iterate became
non-finite.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _residual(Dt, x, p, r):
    # r = D x - p, skipping zero coefficients
    n, m = Dt.shape
    for i in range(m):
        r[i] = -p[i]
    for j in range(n):
        xj = x[j]
        if xj != 0.0:
            for i in range(m):
                r[i] += Dt[j, i] * xj


@njit(**_JIT)
def _gradient(Dt, r, g):
    # g = D^T r
    n, m = Dt.shape
    for j in range(n):
        s = 0.0
        for i in range(m):
            s += Dt[j, i] * r[i]
        g[j] = s


@njit(**_JIT)
def _shrink(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(**_JIT)
def _objective(r, x, mu):
    f = 0.0
    for i in range(r.shape[0]):
        f += r[i] * r[i]
    a = 0.0
    for j in range(x.shape[0]):
        a += abs(x[j])
    return 0.5 * f + mu * a


@njit(**_JIT)
def _stop(step2, ref2, eps):
    if ref2 == 0.0:
        return step2 == 0.0
    return step2 <= eps * eps * ref2


@njit(**_JIT)
def ista(Dt, Pt, Xt, mu, tau, eps, max_iters, hist, iters, conv):
    n, m = Dt.shape
    r = np.empty(m)
    g = np.empty(n)
    thr = tau * mu
    record = hist.shape[0] > 0
    for k in range(Pt.shape[0]):
        x = Xt[k]
        p = Pt[k]
        ref2 = 0.0
        for j in range(n):
            ref2 += x[j] * x[j]
        _residual(Dt, x, p, r)
        if record and k == 0:
            hist[0] = _objective(r, x, mu)
        for it in range(1, max_iters + 1):
            _gradient(Dt, r, g)
            step2 = 0.0
            new2 = 0.0
            for j in range(n):
                v = _shrink(x[j] - tau * g[j], thr)
                d = v - x[j]
                step2 += d * d
                new2 += v * v
                x[j] = v
            iters[k] = it
            if not np.isfinite(new2):
                return k
            _residual(Dt, x, p, r)
            if record and k == 0:
                hist[it] = _objective(r, x, mu)
            if _stop(step2, ref2, eps):
                conv[k] = True
                break
            ref2 = new2
    return -1


@njit(**_JIT)
def fista(Dt, Pt, Xt, mu, tau, eps, max_iters, hist, iters, conv):
    n, m = Dt.shape
    r = np.empty(m)
    g = np.empty(n)
    y = np.empty(n)
    gam = np.empty(n)
    thr = tau * mu
    record = hist.shape[0] > 0
    for k in range(Pt.shape[0]):
        x = Xt[k]
        p = Pt[k]
        ref2 = 0.0
        for j in range(n):
            y[j] = x[j]
            ref2 += x[j] * x[j]
        if record and k == 0:
            _residual(Dt, x, p, r)
            hist[0] = _objective(r, x, mu)
        t = 1.0
        for it in range(1, max_iters + 1):
            _residual(Dt, y, p, r)
            _gradient(Dt, r, g)
            step2 = 0.0
            new2 = 0.0
            uphill = 0.0
            for j in range(n):
                v = _shrink(y[j] - tau * g[j], thr)
                d = v - x[j]
                step2 += d * d
                new2 += v * v
                uphill += (y[j] - v) * d
                gam[j] = v
            # gradient restart: drop momentum when it points uphill
            if uphill > 0.0:
                t = 1.0
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            w = (t - 1.0) / t_next
            for j in range(n):
                v = gam[j]
                y[j] = v + w * (v - x[j])
                x[j] = v
            t = t_next
            iters[k] = it
            if not np.isfinite(new2):
                return k
            if record and k == 0:
                _residual(Dt, x, p, r)
                hist[it] = _objective(r, x, mu)
            if _stop(step2, ref2, eps):
                conv[k] = True
                break
            ref2 = new2
    return -1


@njit(**_JIT)
def fpc_bb(Dt, Pt, Xt, mu, tau0, eps, max_iters, hist, iters, conv,
           eta, stage_tol, tau_min, tau_max, memory):
    n, m = Dt.shape
    r = np.empty(m)
    g = np.empty(n)
    gn = np.empty(n)
    xn = np.empty(n)
    recent = np.empty(memory)
    record = hist.shape[0] > 0
    for k in range(Pt.shape[0]):
        x = Xt[k]
        p = Pt[k]
        # ||D^T p||_inf sets the continuation schedule
        for i in range(m):
            r[i] = -p[i]
        _gradient(Dt, r, g)
        corr = 0.0
        for j in range(n):
            corr = max(corr, abs(g[j]))
        stage = 1
        mu_bar = max(mu, eta * corr)

        ref2 = 0.0
        for j in range(n):
            ref2 += x[j] * x[j]
        _residual(Dt, x, p, r)
        _gradient(Dt, r, g)
        if record and k == 0:
            hist[0] = _objective(r, x, mu)
        # objectives of the current stage, for the non-monotone acceptance test
        recent[:] = -np.inf
        recent[0] = _objective(r, x, mu_bar)
        slot = 0
        tau = tau0
        for it in range(1, max_iters + 1):
            ceiling = recent.max()
            for attempt in range(2):
                thr = tau * mu_bar
                step2 = 0.0
                new2 = 0.0
                for j in range(n):
                    v = _shrink(x[j] - tau * g[j], thr)
                    xn[j] = v
                    d = v - x[j]
                    step2 += d * d
                    new2 += v * v
                _residual(Dt, xn, p, r)
                f = _objective(r, xn, mu_bar)
                # a BB step above every recent value is redone with 1/L, which always descends
                if f <= ceiling or tau == tau0:
                    break
                tau = tau0
            iters[k] = it
            if not np.isfinite(new2):
                return k
            _gradient(Dt, r, gn)
            sy = 0.0
            for j in range(n):
                sy += (xn[j] - x[j]) * (gn[j] - g[j])
            if sy > 0.0:
                tau = min(max(step2 / sy, tau_min), tau_max)
            else:
                tau = tau0
            for j in range(n):
                x[j] = xn[j]
                g[j] = gn[j]
            if record and k == 0:
                hist[it] = _objective(r, x, mu)
            slot = (slot + 1) % memory
            recent[slot] = f
            final = mu_bar <= mu
            if _stop(step2, ref2, eps if final else stage_tol):
                if final:
                    conv[k] = True
                    break
                stage += 1
                mu_bar = max(mu, eta ** stage * corr)
                recent[:] = -np.inf
                recent[0] = _objective(r, x, mu_bar)
                slot = 0
            ref2 = new2
    return -1


@njit(**_JIT)
def twist(Dt, Pt, Xt, mu, inv_l, eps, max_iters, hist, iters, conv, alpha, beta):
    n, m = Dt.shape
    r = np.empty(m)
    rn = np.empty(m)
    g = np.empty(n)
    gam = np.empty(n)
    xn = np.empty(n)
    xp = np.empty(n)
    thr = mu * inv_l
    record = hist.shape[0] > 0
    for k in range(Pt.shape[0]):
        x = Xt[k]
        p = Pt[k]
        ref2 = 0.0
        for j in range(n):
            xp[j] = x[j]
            ref2 += x[j] * x[j]
        _residual(Dt, x, p, r)
        f = _objective(r, x, mu)
        if record and k == 0:
            hist[0] = f
        for it in range(1, max_iters + 1):
            _gradient(Dt, r, g)
            for j in range(n):
                gam[j] = _shrink(x[j] - inv_l * g[j], thr)
            if it == 1:
                for j in range(n):
                    xn[j] = gam[j]
            else:
                for j in range(n):
                    xn[j] = (1.0 - alpha) * xp[j] + (alpha - beta) * x[j] + beta * gam[j]
            _residual(Dt, xn, p, rn)
            fn = _objective(rn, xn, mu)
            if it > 1 and fn > f:
                for j in range(n):
                    xn[j] = gam[j]
                _residual(Dt, xn, p, rn)
                fn = _objective(rn, xn, mu)
            step2 = 0.0
            new2 = 0.0
            for j in range(n):
                d = xn[j] - x[j]
                step2 += d * d
                new2 += xn[j] * xn[j]
                xp[j] = x[j]
                x[j] = xn[j]
            for i in range(m):
                r[i] = rn[i]
            f = fn
            iters[k] = it
            if not np.isfinite(new2):
                return k
            if record and k == 0:
                hist[it] = f
            if _stop(step2, ref2, eps):
                conv[k] = True
                break
            ref2 = new2
    return -1


@njit(**_JIT)
def bcd(Dt, A, Bt, used, max_sweeps, tol):
    """Cyclic atom updates on ``Dt`` (atoms as rows), in place.

    Only atoms listed in ``used`` are visited or read: an atom with
    ``A_jj = 0`` has an all-zero row in ``A``. Returns the sweep count.
    """
    n, m = Dt.shape
    u = np.empty(m)
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for jj in range(used.shape[0]):
            j = used[jj]
            for i in range(m):
                u[i] = Bt[j, i]
            for ll in range(used.shape[0]):
                l = used[ll]
                a = A[l, j]
                if a != 0.0:
                    for i in range(m):
                        u[i] -= Dt[l, i] * a
            ajj = A[j, j]
            norm2 = 0.0
            for i in range(m):
                u[i] = u[i] / ajj + Dt[j, i]
                norm2 += u[i] * u[i]
            norm = np.sqrt(norm2)
            change2 = 0.0
            for i in range(m):
                v = u[i] / norm if norm > 1.0 else u[i]
                d = v - Dt[j, i]
                change2 += d * d
                Dt[j, i] = v
            biggest = max(biggest, np.sqrt(change2))
        if biggest <= tol:
            break
    return sweep
