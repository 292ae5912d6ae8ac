"""Numerical primitives shared by the estimators.

Linear solves with a jitter policy, a cyclic Jacobi eigensolver, a batched
bounded Levenberg-Marquardt fitter, the chi-square tail probability, and
seeded random streams with polar-method normal deviates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, DomainError, NotPositiveDefinite

# jitter levels, as fractions of trace/dim; the first attempt is unjittered
JITTER_LEVELS = (0.0, 1e-8, 1e-6)
_SOLVE_RTOL = 1e-10

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Draws come from numpy's PCG64 bit generator seeded through a
    ``SeedSequence`` whose entropy is ``seed`` and whose spawn key is
    ``(stream_id,)``, so distinct stream ids give independent streams.
    The object is immutable: every draw method starts from the beginning
    of the stream, so calling it twice returns the same numbers.  Use
    :meth:`substream` to obtain further independent streams.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def substream(self, key: int) -> "RngStream":
        """Child stream; deterministic in ``(seed, stream_id, key)``."""
        mixed = _splitmix64(self.stream_id ^ _splitmix64((int(key) + 1) & _MASK64))
        return RngStream(self.seed, mixed)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size) -> np.ndarray:
        return self.generator().random(size)

    def normals(self, size) -> np.ndarray:
        """Standard normal deviates generated with the Marsaglia polar method."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        return polar_normals(self.generator(), n).reshape(shape)


def polar_normals(gen: np.random.Generator, n: int) -> np.ndarray:
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        pairs = int(need / (2 * 0.7853981)) + 16
        u = gen.random((pairs, 2)) * 2.0 - 1.0
        s = u[:, 0] ** 2 + u[:, 1] ** 2
        ok = (s > 0.0) & (s < 1.0)
        u, s = u[ok], s[ok]
        z = (u * np.sqrt(-2.0 * np.log(s) / s)[:, None]).ravel()
        take = min(z.size, need)
        out[filled:filled + take] = z[:take]
        filled += take
    return out


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

def _jitter(a: np.ndarray, level: float) -> np.ndarray:
    if level == 0.0:
        return a
    n = a.shape[-1]
    tr = np.trace(a, axis1=-2, axis2=-1) / n
    out = a.copy()
    idx = np.arange(n)
    out[..., idx, idx] += (level * tr)[..., None] if out.ndim == 3 else level * tr
    return out


def jittered_cholesky(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a`` under the jitter policy.

    Returns the factor and the jitter level used (0 when none was needed).
    """
    a = np.asarray(a, dtype=float)
    if a.shape[0] == 0:
        return a.copy(), 0.0
    if np.trace(a) <= 0.0:
        if not np.any(a):
            raise NotPositiveDefinite("zero matrix")
        raise NotPositiveDefinite("nonpositive trace")
    for level in JITTER_LEVELS:
        try:
            return np.linalg.cholesky(_jitter(a, level)), level
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefinite(
        f"Cholesky failed after jitter {JITTER_LEVELS[-1]:g} * trace/dim"
    )


def cholesky_solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a``.

    The unjittered factorization is accepted only when its residual meets
    ``|a x - b|_inf <= 1e-10 |b|_inf``; otherwise the diagonal is loaded
    with 1e-8 and then 1e-6 times trace/dim.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch between a and b")
    if np.trace(a) <= 0.0:
        raise NotPositiveDefinite("nonpositive trace")
    bnorm = np.max(np.abs(b)) if b.size else 0.0
    for level in JITTER_LEVELS:
        aj = _jitter(a, level)
        try:
            factor = scipy.linalg.cho_factor(aj, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        x = scipy.linalg.cho_solve(factor, b, check_finite=False)
        if level == 0.0:
            resid = np.max(np.abs(a @ x - b)) if b.size else 0.0
            if not np.isfinite(resid) or resid > _SOLVE_RTOL * max(bnorm, 1e-300):
                continue
        elif not np.all(np.isfinite(x)):
            continue
        return x
    raise NotPositiveDefinite(
        f"Cholesky failed after jitter {JITTER_LEVELS[-1]:g} * trace/dim"
    )


def _batched_cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    s, n, _ = chol.shape
    y = np.empty((s, n))
    for i in range(n):
        y[:, i] = (b[i] - np.einsum("sj,sj->s", chol[:, i, :i], y[:, :i])) / chol[:, i, i]
    x = np.empty((s, n))
    for i in range(n - 1, -1, -1):
        x[:, i] = (y[:, i] - np.einsum("sj,sj->s", chol[:, i + 1:, i], x[:, i + 1:])) / chol[:, i, i]
    return x


def cholesky_solve_many(stack: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``stack[s] x_s = b`` for a stack of SPD matrices sharing ``b``."""
    stack = np.asarray(stack, dtype=float)
    b = np.asarray(b, dtype=float)
    if stack.shape[0] == 0:
        return np.empty((0, b.size))
    try:
        chol = np.linalg.cholesky(stack)
    except np.linalg.LinAlgError:
        return np.stack([cholesky_solve(m, b) for m in stack])
    x = _batched_cho_solve(chol, b)
    resid = np.max(np.abs(np.einsum("sij,sj->si", stack, x) - b), axis=1)
    bad = ~(resid <= _SOLVE_RTOL * max(np.max(np.abs(b)), 1e-300))
    for s in np.flatnonzero(bad):
        x[s] = cholesky_solve(stack[s], b)
    return x


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------

MAX_SWEEPS = 60


@numba.njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    n = a.shape[0]
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = np.sqrt(norm)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * norm or norm == 0.0:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return -1


def sym_eigen(a, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of symmetric ``a``.

    Cyclic (row-by-row) Jacobi rotations.  Sweeps stop once the off-diagonal
    Frobenius norm is below ``tol * |a|_F``; needing more than
    ``MAX_SWEEPS`` sweeps raises :class:`ConvergenceFailure`.  Each
    eigenvector is signed so that its largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    n = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    a = np.ascontiguousarray(0.5 * (a + a.T))
    v = np.eye(n)
    if _jacobi_sweeps(a, v, tol, MAX_SWEEPS) < 0:
        raise ConvergenceFailure(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    v = v[:, order]
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[lead, np.arange(n)] < 0, -1.0, 1.0)
    return vals, v * signs


# ---------------------------------------------------------------------------
# Nonlinear least squares
# ---------------------------------------------------------------------------

RESTART_FACTORS = (0.3, 3.0, 0.1, 10.0, 0.5)


def _fd_jacobian(fun, xa, idx):
    npar = xa.shape[1]
    h = 1e-6 * np.maximum(np.abs(xa), 1e-3)
    cols = []
    for k in range(npar):
        xp = xa.copy()
        xm = xa.copy()
        xp[:, k] += h[:, k]
        xm[:, k] -= h[:, k]
        cols.append((fun(xp, idx) - fun(xm, idx)) / (2.0 * h[:, k:k + 1]))
    return np.stack(cols, axis=2)


def _lm_batch(fun, x0, lower, upper, max_iter, ftol, xtol, gtol, jac=None):
    b, npar = x0.shape
    x = np.clip(x0, lower, upper)
    r = fun(x)
    cost = 0.5 * np.sum(r * r, axis=1)
    lam = np.full(b, 1e-3)
    active = np.ones(b, dtype=bool)
    converged = np.zeros(b, dtype=bool)
    span = upper - lower
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ra = x[idx], r[idx]
        jm = _fd_jacobian(fun, xa, idx) if jac is None else jac(xa, idx)
        g = np.einsum("bnk,bn->bk", jm, ra)
        hess = np.einsum("bnk,bnl->bkl", jm, jm)
        # projected gradient: components pushing against an active bound vanish
        at_lo = (xa <= lower + 1e-12 * span) & (g > 0)
        at_hi = (xa >= upper - 1e-12 * span) & (g < 0)
        fixed = at_lo | at_hi
        gproj = np.where(fixed, 0.0, g)
        small_g = np.max(np.abs(gproj), axis=1) <= gtol * (1.0 + cost[idx])
        # step only in the free coordinates
        free = (~fixed).astype(float)
        hess = hess * free[:, :, None] * free[:, None, :]
        diag = np.einsum("bkk->bk", hess)
        diag = np.where(fixed, 1.0, diag)
        g = gproj
        damp = lam[idx, None] * np.maximum(diag, 1e-12 * (np.sum(diag, axis=1, keepdims=True) + 1e-300))
        mat = hess + np.where(fixed, 1.0, damp)[:, :, None] * np.eye(npar)
        step = -np.linalg.solve(mat, g[:, :, None])[:, :, 0]
        xn = np.clip(xa + step, lower, upper)
        rn = fun(xn, idx)
        cn = 0.5 * np.sum(rn * rn, axis=1)
        ok = np.isfinite(cn) & (cn <= cost[idx])
        dx = np.max(np.abs(xn - xa), axis=1)
        dcost = cost[idx] - cn
        acc = idx[ok]
        x[acc] = xn[ok]
        r[acc] = rn[ok]
        small_f = ok & (dcost <= ftol * np.maximum(cost[idx], 1e-300))
        small_x = ok & (dx <= xtol * (np.max(np.abs(xa), axis=1) + xtol))
        cost[acc] = cn[ok]
        lam[idx] = np.where(ok, np.maximum(lam[idx] / 3.0, 1e-12), lam[idx] * 4.0)
        done = small_f | small_x | small_g
        stalled = lam[idx] > 1e14
        converged[idx[done]] = True
        # a stall at a point with small gradient is a minimum to FD precision
        stall_ok = stalled & ~done & (np.max(np.abs(gproj), axis=1) <= 1e-6 * (1.0 + cost[idx]))
        converged[idx[stall_ok]] = True
        active[idx[done | stalled]] = False
    return x, converged, cost


def nls_fit_batch(
    residual_fn: Callable,
    init,
    bounds,
    *,
    check_saturation: Sequence[bool] | None = None,
    max_iter: int = 200,
    restarts: int = 5,
    ftol: float = 1e-10,
    xtol: float = 1e-10,
    gtol: float = 1e-10,
    jac_fn: Callable | None = None,
):
    """Fit many independent least-squares problems at once.

    ``residual_fn(params, rows)`` receives a ``(B', P)`` parameter array and
    the indices of the problems those rows belong to, and returns the
    ``(B', n)`` residuals.  ``bounds`` is ``(lower, upper)``, each of length
    ``P``.  Problems that do not converge, or end on a bound flagged in
    ``check_saturation``, are restarted from the initial point scaled by
    the factors in ``RESTART_FACTORS``.

    ``jac_fn(params, rows)``, if given, returns the ``(B', n, P)``
    Jacobian; otherwise central differences are used.

    Returns ``(params, converged, cost)`` with ``cost`` half the sum of
    squared residuals.
    """
    x0 = np.atleast_2d(np.asarray(init, dtype=float))
    lower = np.asarray(bounds[0], dtype=float)
    upper = np.asarray(bounds[1], dtype=float)
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("initial point outside bounds")
    sat = np.ones(x0.shape[1], bool) if check_saturation is None else np.asarray(check_saturation, bool)
    span = upper - lower

    def evaluate(start, rows):
        sub = lambda x, r=None: residual_fn(x, rows if r is None else rows[r])
        subj = None if jac_fn is None else (lambda x, r: jac_fn(x, rows[r]))
        x, conv, cost = _lm_batch(sub, start, lower, upper, max_iter, ftol, xtol, gtol, subj)
        on_bound = ((x <= lower + 1e-9 * span) | (x >= upper - 1e-9 * span)) & sat
        return x, conv & ~np.any(on_bound, axis=1), cost

    rows = np.arange(x0.shape[0])
    x, conv, cost = evaluate(x0, rows)
    for factor in RESTART_FACTORS[:restarts]:
        bad = np.flatnonzero(~conv)
        if bad.size == 0:
            break
        start = np.clip(x0[bad] * factor, lower, upper)
        xr, cr, costr = evaluate(start, rows[bad])
        better = (cr & ~conv[bad]) | ((cr == conv[bad]) & (costr < cost[bad]))
        sel = bad[better]
        x[sel], conv[sel], cost[sel] = xr[better], cr[better], costr[better]
    return x, conv, cost


def nls_fit(residual_fn: Callable, init, bounds, **kwargs) -> tuple[np.ndarray, bool]:
    """Bounded Levenberg-Marquardt fit of a single problem.

    ``residual_fn(params)`` maps a 1-d parameter vector to residuals.
    Returns ``(params, converged)``; ``converged`` is False on a stall,
    the iteration limit, or a solution sitting on a bound.
    """
    def batch(x, rows):
        return np.stack([np.asarray(residual_fn(p), dtype=float) for p in x])

    x, conv, _ = nls_fit_batch(batch, np.asarray(init, float)[None, :], bounds, **kwargs)
    return x[0], bool(conv[0])


# ---------------------------------------------------------------------------
# Chi-square tail
# ---------------------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x)
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a: float, x: float) -> float:
    # upper regularized Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _chisq_pair(x: float, df: int) -> tuple[float, float]:
    if x < 0 or math.isnan(x):
        raise DomainError("chi-square argument must be nonnegative")
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    if x == 0.0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    a = 0.5 * df
    half = 0.5 * x
    if half == 0.0:  # x subnormal
        return 0.0, 1.0
    if half < a + 1.0:
        p = _gamma_series(a, half)
        return p, 1.0 - p
    q = _gamma_cfrac(a, half)
    return 1.0 - q, q


def chisq_sf(x: float, df: int) -> float:
    """P(chi2_df > x) through the regularized incomplete gamma function."""
    if x < 0:
        raise DomainError("chi-square argument must be nonnegative")
    return _chisq_pair(float(x), int(df))[1]


def chisq_cdf(x: float, df: int) -> float:
    if x < 0:
        raise DomainError("chi-square argument must be nonnegative")
    return _chisq_pair(float(x), int(df))[0]


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def mvn_sample(chol_factor, rng: RngStream) -> np.ndarray:
    """``L z`` with ``z`` standard normal drawn from ``rng``."""
    chol = np.asarray(chol_factor, dtype=float)
    if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
        raise ValueError("square factor required")
    return chol @ rng.normals(chol.shape[0])
