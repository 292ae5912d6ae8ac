"""Functional principal components of spatially indexed curves.

Components are expanded in an orthonormal basis, so each estimator reduces
to a ``K x K`` symmetric eigenproblem:

* ``standard_fpc``: equal-weight covariance of the basis coefficients.
* ``estimate_fpc_cm3``: entry ``(i, j)`` is a spatially weighted mean of the
  product field ``xi_i(s) xi_j(s)``, with its own fitted variogram.
* ``estimate_fpc_cm2``: one set of weights for the rank-one operators
  ``<X_k, .> X_k``, derived from a variogram of their Hilbert-Schmidt
  distances.

Inputs are expected to be centered.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .curvegrid import BasisSet, Curve, CurveSet, Grid, GridMismatch, fourier_basis, project_many
from .numkernel import sym_eigen
from .spatial_mean import MIN_SITES, field_means, model_weights
from .variogram import (
    DEFAULT_BINS,
    EXPONENTIAL,
    FLAT,
    CovModel,
    empirical_variogram,
    fit_cov_model,
    hs_cloud,
)

VARIANCE_SHARE = 0.85


@dataclass
class FpcSet:
    """Estimated components on the grid and their eigenvalues.

    ``components`` is ``(p, m)``; ``coefficients`` the same components in
    basis coordinates (``p x K``); ``all_eigenvalues`` every eigenvalue of
    the ``K x K`` problem, descending, negative ones included.
    """

    grid: Grid
    components: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray
    coefficients: np.ndarray
    basis_K: int

    @property
    def p(self) -> int:
        return self.components.shape[0]

    def __getitem__(self, j: int) -> Curve:
        return Curve(self.grid, self.components[j])

    def gram(self) -> np.ndarray:
        return self.components @ self.components.T / self.grid.m

    def explained(self) -> np.ndarray:
        """Cumulative share of variance, negative eigenvalues floored at 0."""
        pos = np.maximum(self.all_eigenvalues, 0.0)
        tot = pos.sum()
        return np.cumsum(pos) / tot if tot > 0 else np.zeros_like(pos)

    def truncated(self, p: int) -> "FpcSet":
        return FpcSet(self.grid, self.components[:p], self.eigenvalues[:p],
                      self.all_eigenvalues, self.coefficients[:p], self.basis_K)

    def to_csv(self, eigen_path, component_path) -> None:
        with open(eigen_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue", "cumulative_share"])
            share = self.explained()
            for j, lam in enumerate(self.all_eigenvalues):
                w.writerow([j + 1, repr(float(lam)), repr(float(share[j]))])
        from .curvegrid import write_curves_csv

        write_curves_csv(component_path, self.components)


def choose_p(eigenvalues, share: float = VARIANCE_SHARE) -> int:
    """Smallest ``p`` whose leading eigenvalues explain at least ``share``."""
    pos = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    tot = pos.sum()
    if tot <= 0:
        return 1
    cum = np.cumsum(pos) / tot
    return int(np.searchsorted(cum, share - 1e-12) + 1)


def fpcs_from_matrix(r, basis: BasisSet, p: Optional[int] = None) -> FpcSet:
    """Eigen-decompose a basis-coordinate covariance and synthesize curves."""
    r = np.asarray(r, dtype=float)
    vals, vecs = sym_eigen(0.5 * (r + r.T))
    if p is None:
        p = choose_p(vals)
    p = int(min(max(p, 1), basis.K))
    coef = vecs[:, :p].T
    return FpcSet(basis.grid, coef @ basis.functions, vals[:p].copy(), vals, coef, basis.K)


def _basis(data: CurveSet, K, basis):
    return fourier_basis(data.grid, K) if basis is None else basis


def _dists(data: CurveSet, dists):
    return data.distances() if dists is None else np.asarray(dists, dtype=float)


def standard_fpc(data: CurveSet, K: Optional[int] = None, p: Optional[int] = None,
                 basis: Optional[BasisSet] = None) -> FpcSet:
    """Eigenfunctions of the equal-weight covariance operator."""
    basis = _basis(data, K, basis)
    c = project_many(data.values, basis)
    return fpcs_from_matrix(c.T @ c / len(data), basis, p)


def estimate_fpc_cm3(data: CurveSet, K: Optional[int] = None, p: Optional[int] = None,
                     estimator: str = "MT", kind: str = EXPONENTIAL, dists=None,
                     n_bins: int = DEFAULT_BINS, basis: Optional[BasisSet] = None,
                     force_flat: bool = False) -> FpcSet:
    """Method CM3.

    Only the upper triangle ``i <= j`` is estimated; the matrix is then
    symmetrized.  ``force_flat`` skips the fits and uses plain averages,
    which reproduces :func:`standard_fpc`.
    """
    basis = _basis(data, K, basis)
    c = project_many(data.values, basis)
    k = basis.K
    iu, ju = np.triu_indices(k)
    z = c[:, iu] * c[:, ju]
    if force_flat or len(data) < MIN_SITES:
        est = z.mean(axis=0)
    else:
        est = field_means(z, _dists(data, dists), estimator, kind, n_bins)
    r = np.zeros((k, k))
    r[iu, ju] = est
    r[ju, iu] = est
    return fpcs_from_matrix(r, basis, p)


def operator_model(data: CurveSet, estimator: str = "MT", kind: str = EXPONENTIAL,
                   dists=None, n_bins: int = DEFAULT_BINS) -> CovModel:
    """Fitted variogram model of the Hilbert-Schmidt distances."""
    emp = empirical_variogram(hs_cloud(data, dists), estimator, n_bins)
    if len(emp) < 3:
        return CovModel(FLAT, float(np.mean(emp.gamma)))
    return fit_cov_model(emp, kind)


def estimate_fpc_cm2(data: CurveSet, K: Optional[int] = None, p: Optional[int] = None,
                     estimator: str = "MT", kind: str = EXPONENTIAL, dists=None,
                     n_bins: int = DEFAULT_BINS, basis: Optional[BasisSet] = None,
                     model: Optional[CovModel] = None) -> FpcSet:
    """Method CM2: weighted covariance operator ``sum_k w_k C_k``.

    A flat operator variogram gives equal weights and hence the standard
    estimator.
    """
    basis = _basis(data, K, basis)
    c = project_many(data.values, basis)
    n = len(data)
    if n < MIN_SITES:
        w = np.full(n, 1.0 / n)
    else:
        dists = _dists(data, dists)
        if model is None:
            model = operator_model(data, estimator, kind, dists, n_bins)
        w = model_weights(model, dists)
    s = (c * w[:, None]).T @ c
    return fpcs_from_matrix(s, basis, p)


@dataclass
class ScoreField:
    """Scores ``<X(s_k) - mu, v_i>`` as an ``N x p`` matrix."""

    scores: np.ndarray
    locations: Optional[object] = None

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def p(self) -> int:
        return self.scores.shape[1]


def scores(data: CurveSet, mean: Curve, fpcs: FpcSet) -> ScoreField:
    if data.grid != mean.grid or data.grid != fpcs.grid:
        raise GridMismatch("data, mean and components must share a grid")
    centered = data.values - mean.values
    return ScoreField(centered @ fpcs.components.T / data.grid.m, data.locations)
