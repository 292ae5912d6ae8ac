"""Estimators of the mean function of spatially indexed curves.

All spatial estimators are weighted averages whose weights minimize the
expected squared L2 error subject to summing to one, which gives
``w = C^{-1} 1 / (1' C^{-1} 1)`` for the (estimated) matrix ``C`` of
expected inner products between the error curves.

* M1 fits a scalar variogram at every grid point; variant ``a`` integrates
  the fitted covariances over t, variant ``b`` uses the mean fitted range.
* M2 fits one variogram to the L2 norms of curve differences.
* M3 estimates each Fourier coefficient of the mean separately.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvegrid import BasisSet, Curve, CurveSet, fourier_basis, project_many
from .errors import AllFitsFailed
from .numkernel import cholesky_solve, cholesky_solve_many
from .variogram import (
    DEFAULT_BINS,
    EXPONENTIAL,
    FLAT,
    CovModel,
    correlation_shape,
    empirical_variogram,
    field_variograms,
    fit_cov_model,
    fit_variograms,
    functional_cloud,
)

MIN_SITES = 4


@dataclass
class WeightVector:
    w: np.ndarray
    multiplier: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)

    def __len__(self) -> int:
        return self.w.size


def optimal_weights(c) -> WeightVector:
    """Weights minimizing ``w' C w`` subject to ``sum(w) = 1``.

    ``multiplier`` is the Lagrange multiplier ``r`` with ``C w = r 1``.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    v = cholesky_solve(c, np.ones(n))
    total = v.sum()
    return WeightVector(v / total, 1.0 / total)


def weights_many(stack) -> np.ndarray:
    """Optimal weights for a stack of matrices, shape ``(S, N)``."""
    stack = np.asarray(stack, dtype=float)
    v = cholesky_solve_many(stack, np.ones(stack.shape[1]))
    return v / v.sum(axis=1, keepdims=True)


def model_weights(model: CovModel, dists) -> np.ndarray:
    """Optimal weights for the correlation matrix implied by ``model``."""
    n = dists.shape[0]
    if model.kind == FLAT:
        return np.full(n, 1.0 / n)
    return optimal_weights(model.correlation(dists)).w


def sample_mean(data: CurveSet) -> Curve:
    return Curve(data.grid, data.values.mean(axis=0))


def _weighted(data: CurveSet, w) -> Curve:
    return Curve(data.grid, np.asarray(w) @ data.values)


def _distances(data: CurveSet, dists):
    return data.distances() if dists is None else np.asarray(dists, dtype=float)


# ---------------------------------------------------------------------------
# M1
# ---------------------------------------------------------------------------

@dataclass
class PointwiseFits:
    """Variogram fits at every grid point; ``success`` marks structured fits."""

    kind: str
    sigma2: np.ndarray
    rho: np.ndarray
    success: np.ndarray
    degenerate: bool = False


def fit_pointwise(data: CurveSet, estimator: str = "MT", kind: str = EXPONENTIAL,
                  dists=None, n_bins: int = DEFAULT_BINS) -> PointwiseFits:
    """Fit a scalar covariance model to ``X(s; t_j)`` at each ``t_j``."""
    dists = _distances(data, dists)
    binning, gamma = field_variograms(data.values, dists, estimator, n_bins)
    if not np.any(gamma > 0):
        m = data.grid.m
        return PointwiseFits(kind, np.zeros(m), np.zeros(m), np.zeros(m, bool), degenerate=True)
    fits = fit_variograms(binning.centers, gamma, binning.counts, binning.dmax, kind)
    return PointwiseFits(fits.kind, fits.sigma2, fits.rho, fits.ok)


def estimate_mean_m1(data: CurveSet, variant: str = "a", estimator: str = "MT",
                     kind: str = EXPONENTIAL, dists=None, n_bins: int = DEFAULT_BINS,
                     fits: Optional[PointwiseFits] = None) -> Curve:
    """Method M1.

    Variant ``a`` sets ``C_kl`` to the average over successfully fitted grid
    points of ``sigma2(t) g(d_kl / rho(t))``; variant ``b`` uses
    ``g(d_kl / mean rho)``.  Pass ``fits`` to reuse pointwise fits.
    """
    if variant not in ("a", "b"):
        raise ValueError("variant must be 'a' or 'b'")
    n = len(data)
    if n < MIN_SITES:
        return sample_mean(data)
    dists = _distances(data, dists)
    if fits is None:
        fits = fit_pointwise(data, estimator, kind, dists, n_bins)
    if fits.degenerate:
        # no variation at any grid point: every weighting gives the same curve
        return sample_mean(data)
    ok = np.flatnonzero(fits.success)
    if ok.size == 0:
        raise AllFitsFailed("no grid point produced a structured variogram fit")
    if variant == "a":
        c = np.zeros((n, n))
        for j in ok:
            c += fits.sigma2[j] * correlation_shape(fits.kind, dists / fits.rho[j])
        c /= ok.size
    else:
        c = correlation_shape(fits.kind, dists / fits.rho[ok].mean())
    return _weighted(data, optimal_weights(c).w)


# ---------------------------------------------------------------------------
# M2
# ---------------------------------------------------------------------------

def functional_model(data: CurveSet, estimator: str = "MT", kind: str = EXPONENTIAL,
                     dists=None, n_bins: int = DEFAULT_BINS) -> CovModel:
    """Fitted model of the functional variogram ``E|X(s_k) - X(s_l)|^2``."""
    dists = _distances(data, dists)
    emp = empirical_variogram(functional_cloud(data, dists), estimator, n_bins)
    if len(emp) < 3:
        return CovModel(FLAT, float(np.mean(emp.gamma)))
    return fit_cov_model(emp, kind)


def estimate_mean_m2(data: CurveSet, estimator: str = "MT", kind: str = EXPONENTIAL,
                     dists=None, n_bins: int = DEFAULT_BINS) -> Curve:
    """Method M2; a flat functional variogram gives the sample mean."""
    if len(data) < MIN_SITES:
        return sample_mean(data)
    dists = _distances(data, dists)
    model = functional_model(data, estimator, kind, dists, n_bins)
    if model.kind == FLAT:
        return sample_mean(data)
    return _weighted(data, model_weights(model, dists))


# ---------------------------------------------------------------------------
# M3
# ---------------------------------------------------------------------------

def field_means(fields, dists, estimator: str = "MT", kind: str = EXPONENTIAL,
                n_bins: int = DEFAULT_BINS, chunk: int = 128) -> np.ndarray:
    """Spatially weighted mean of each column of ``fields`` (``N x F``).

    Each column gets its own fitted covariance model; columns whose fit
    falls back to the flat model get the plain average.
    """
    fields = np.asarray(fields, dtype=float)
    n, nf = fields.shape
    means = fields.mean(axis=0)
    binning, gamma = field_variograms(fields, dists, estimator, n_bins)
    if binning.counts.size < 3:
        return means
    fits = fit_variograms(binning.centers, gamma, binning.counts, binning.dmax, kind)
    idx = np.flatnonzero(fits.ok)
    for a in range(0, idx.size, chunk):
        sel = idx[a:a + chunk]
        stack = correlation_shape(fits.kind, dists[None, :, :] / fits.rho[sel, None, None])
        w = weights_many(stack)
        means[sel] = np.einsum("sn,ns->s", w, fields[:, sel])
    return means


def estimate_mean_m3(data: CurveSet, K: Optional[int] = None, estimator: str = "MT",
                     kind: str = EXPONENTIAL, dists=None, n_bins: int = DEFAULT_BINS,
                     basis: Optional[BasisSet] = None) -> Curve:
    """Method M3: weighted mean of each basis coefficient field."""
    if basis is None:
        basis = fourier_basis(data.grid, K)
    coeffs = project_many(data.values, basis)
    if len(data) < MIN_SITES:
        mu = coeffs.mean(axis=0)
    else:
        mu = field_means(coeffs, _distances(data, dists), estimator, kind, n_bins)
    return Curve(data.grid, mu @ basis.functions)
