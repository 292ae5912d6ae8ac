"""Compiled Levenberg-Marquardt fits of ``c0 + s (1 - g(u / r))``.

Same algorithm as :func:`spatfda.numkernel.nls_fit_batch` (active-set
bounds, Marquardt damping, saturation check, restarts from scaled initial
points), specialized to the variogram models so that thousands of small
fits run without Python overhead.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _resid_jac(p, u, y, w, expo, nugget, r, jac):
    npar = p.size
    c0 = p[0] if nugget else 0.0
    s = p[npar - 2]
    rho = p[npar - 1]
    for i in range(u.size):
        z = u[i] / rho
        g = np.exp(-z) if expo else np.exp(-z * z)
        r[i] = (c0 + s * (1.0 - g) - y[i]) * w[i]
        if jac is not None:
            if nugget:
                jac[i, 0] = w[i]
            jac[i, npar - 2] = (1.0 - g) * w[i]
            if expo:
                jac[i, npar - 1] = -s * g * u[i] / (rho * rho) * w[i]
            else:
                jac[i, npar - 1] = -2.0 * s * g * u[i] * u[i] / (rho * rho * rho) * w[i]


@numba.njit(cache=True)
def _lm_one(x0, lower, upper, u, y, w, expo, nugget, max_iter, ftol, xtol, gtol):
    npar = x0.size
    n = u.size
    span = upper - lower
    x = np.minimum(np.maximum(x0, lower), upper)
    r = np.empty(n)
    rn = np.empty(n)
    jac = np.empty((n, npar))
    _resid_jac(x, u, y, w, expo, nugget, r, None)
    cost = 0.5 * np.dot(r, r)
    lam = 1e-3
    for _ in range(max_iter):
        _resid_jac(x, u, y, w, expo, nugget, r, jac)
        g = jac.T @ r
        hess = jac.T @ jac
        fixed = np.zeros(npar, dtype=np.bool_)
        gmax = 0.0
        for k in range(npar):
            if (x[k] <= lower[k] + 1e-12 * span[k] and g[k] > 0) or \
                    (x[k] >= upper[k] - 1e-12 * span[k] and g[k] < 0):
                fixed[k] = True
                g[k] = 0.0
            gmax = max(gmax, abs(g[k]))
        small_g = gmax <= gtol * (1.0 + cost)
        dsum = 0.0
        for k in range(npar):
            dsum += hess[k, k]
        mat = np.zeros((npar, npar))
        for k in range(npar):
            for l in range(npar):
                if not fixed[k] and not fixed[l]:
                    mat[k, l] = hess[k, l]
            if fixed[k]:
                mat[k, k] = 1.0
            else:
                mat[k, k] += lam * max(hess[k, k], 1e-12 * (dsum + 1e-300))
        step = -np.linalg.solve(mat, g)
        xn = np.minimum(np.maximum(x + step, lower), upper)
        _resid_jac(xn, u, y, w, expo, nugget, rn, None)
        cn = 0.5 * np.dot(rn, rn)
        done = small_g
        if np.isfinite(cn) and cn <= cost:
            dx = np.max(np.abs(xn - x))
            small_f = cost - cn <= ftol * max(cost, 1e-300)
            small_x = dx <= xtol * (np.max(np.abs(x)) + xtol)
            done = done or small_f or small_x
            x = xn
            cost = cn
            lam = max(lam / 3.0, 1e-12)
        else:
            lam *= 4.0
        if done:
            return x, True, cost
        if lam > 1e14:
            return x, gmax <= 1e-6 * (1.0 + cost), cost
    return x, False, cost


@numba.njit(cache=True)
def _on_bound(x, lower, upper, sat):
    for k in range(x.size):
        if sat[k]:
            span = upper[k] - lower[k]
            if x[k] <= lower[k] + 1e-9 * span or x[k] >= upper[k] - 1e-9 * span:
                return True
    return False


@numba.njit(cache=True)
def fit_all(u, y, w, init, lower, upper, sat, expo, nugget, factors, max_iter, ftol, xtol, gtol):
    """Fit every row of ``y``; returns ``(params, converged, cost)``."""
    nf = y.shape[0]
    npar = init.shape[1]
    out = np.empty((nf, npar))
    conv = np.zeros(nf, dtype=np.bool_)
    cost = np.empty(nf)
    for f in range(nf):
        x, cv, c = _lm_one(init[f], lower, upper, u, y[f], w, expo, nugget, max_iter, ftol, xtol, gtol)
        cv = cv and not _on_bound(x, lower, upper, sat)
        for factor in factors:
            if cv:
                break
            start = np.minimum(np.maximum(init[f] * factor, lower), upper)
            xr, cr, costr = _lm_one(start, lower, upper, u, y[f], w, expo, nugget,
                                    max_iter, ftol, xtol, gtol)
            cr = cr and not _on_bound(xr, lower, upper, sat)
            if (cr and not cv) or (cr == cv and costr < c):
                x, cv, c = xr, cr, costr
        out[f] = x
        conv[f] = cv
        cost[f] = c
    return out, conv, cost
