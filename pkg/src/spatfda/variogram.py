"""Empirical variograms and parametric covariance models.

The empirical estimators follow the classical Matheron form (mean squared
difference per distance bin, with no factor 1/2) and the robust
Cressie-Hawkins form.  Dissimilarities may be scalar differences, L2 norms
of curve differences, or Hilbert-Schmidt norms of differences of the
rank-one operators built from the curves.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .curvegrid import CurveSet
from .errors import GridMismatch, LengthMismatch, TooFewPairs
from ._vgfit import fit_all
from .numkernel import RESTART_FACTORS, nls_fit_batch

EXPONENTIAL = "exponential"
GAUSSIAN = "gaussian"
FLAT = "flat"
KINDS = (EXPONENTIAL, GAUSSIAN, FLAT)
ESTIMATORS = ("MT", "CH")

DEFAULT_BINS = 15
# fitted range beyond this multiple of the largest distance means no structure
MAX_RANGE_FACTOR = 10.0
# below this correlation at the first bin the range is not resolved by the bins
MIN_FIRST_BIN_CORR = 0.01
# partial sill below this share of the total sill is treated as no structure
MIN_STRUCTURED_SHARE = 0.01
CH_A, CH_B = 0.457, 0.494


# ---------------------------------------------------------------------------
# Covariance models
# ---------------------------------------------------------------------------

def _kind(kind: str) -> str:
    k = str(kind).lower()
    if k.startswith("exp"):
        return EXPONENTIAL
    if k.startswith("gau"):
        return GAUSSIAN
    if k == FLAT:
        return FLAT
    raise ValueError(f"unknown covariance kind {kind!r}")


def _estimator(est: str) -> str:
    e = str(est).upper()
    if e not in ESTIMATORS:
        raise ValueError(f"unknown variogram estimator {est!r}")
    return e


def correlation_shape(kind: str, u):
    """``exp(-u)`` or ``exp(-u^2)`` for scaled distance ``u = d / rho``."""
    u = np.asarray(u, dtype=float)
    if kind == EXPONENTIAL:
        return np.exp(-u)
    return np.exp(-u * u)


@dataclass(frozen=True)
class CovModel:
    """Isotropic covariance ``c0 1{d=0} + sigma2 g(d / rho)``.

    ``g`` is ``exp(-u)`` (exponential) or ``exp(-u^2)`` (Gaussian).  The flat
    model has only ``sigma2`` and no spatial correlation.
    """

    kind: str
    sigma2: float
    rho: Optional[float] = None
    c0: float = 0.0

    def __post_init__(self):
        kind = _kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.sigma2 < 0 or self.c0 < 0:
            raise ValueError("sill and nugget must be nonnegative")
        if kind == FLAT:
            if self.rho is not None or self.c0 != 0.0:
                raise ValueError("the flat model has only sigma2")
        elif self.rho is None or not self.rho > 0:
            raise ValueError("range must be positive")

    @property
    def total_sill(self) -> float:
        return self.c0 + self.sigma2

    def covariance(self, d):
        d = np.asarray(d, dtype=float)
        at_zero = d == 0.0
        if self.kind == FLAT:
            return np.where(at_zero, self.sigma2, 0.0)
        return self.c0 * at_zero + self.sigma2 * correlation_shape(self.kind, d / self.rho)

    def correlation(self, d):
        """Covariance divided by its value at zero distance."""
        tot = self.total_sill
        if tot == 0.0:
            d = np.asarray(d, dtype=float)
            return (d == 0.0).astype(float)
        return self.covariance(d) / tot

    def variogram(self, d):
        return self.total_sill - self.covariance(d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c0": self.c0, "sigma2": self.sigma2, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "CovModel":
        return cls(d["kind"], float(d["sigma2"]), None if d.get("rho") is None else float(d["rho"]),
                   float(d.get("c0", 0.0)))


def cov_eval(model: CovModel, d):
    return model.covariance(d)


# ---------------------------------------------------------------------------
# Dissimilarity clouds
# ---------------------------------------------------------------------------

@dataclass
class DissimilarityCloud:
    """Pair distances and dissimilarity magnitudes over all pairs ``k < l``.

    ``dissim`` holds ``|x_k - x_l|`` (scalar fields), ``|X_k - X_l|`` in L2
    (curves) or ``|C_k - C_l|`` in Hilbert-Schmidt norm (operators); the
    estimators square or root it as needed.
    """

    distances: np.ndarray
    dissim: np.ndarray

    @property
    def squared(self) -> np.ndarray:
        return self.dissim ** 2

    def __len__(self) -> int:
        return self.distances.size


def _pairs(n: int):
    return np.triu_indices(n, 1)


def scalar_cloud(values, dists) -> DissimilarityCloud:
    values = np.asarray(values, dtype=float)
    dists = np.asarray(dists, dtype=float)
    if dists.shape != (values.size, values.size):
        raise LengthMismatch(f"{values.size} values vs distance matrix {dists.shape}")
    i, j = _pairs(values.size)
    return DissimilarityCloud(dists[i, j], np.abs(values[i] - values[j]))


def functional_cloud(curves: CurveSet, dists=None) -> DissimilarityCloud:
    """L2 norms of pairwise curve differences."""
    if len(curves) < 2:
        raise ValueError("need at least two curves")
    dists = curves.distances() if dists is None else np.asarray(dists, dtype=float)
    if dists.shape != (len(curves),) * 2:
        raise LengthMismatch("distance matrix does not match the curve count")
    x = curves.values
    gram = x @ x.T / curves.grid.m
    sq = np.diag(gram)
    i, j = _pairs(len(curves))
    # |x_k - x_l|^2 = |x_k|^2 + |x_l|^2 - 2 <x_k, x_l>
    d2 = sq[i] + sq[j] - 2.0 * gram[i, j]
    return DissimilarityCloud(dists[i, j], np.sqrt(np.maximum(d2, 0.0)))


def hs_cloud(curves: CurveSet, dists=None) -> DissimilarityCloud:
    """Hilbert-Schmidt norms of ``C_k - C_l`` where ``C_k = <X_k, .> X_k``.

    For rank-one operators the squared norm is
    ``|X_k|^4 + |X_l|^4 - 2 <X_k, X_l>^2``.
    """
    if len(curves) < 2:
        raise ValueError("need at least two curves")
    dists = curves.distances() if dists is None else np.asarray(dists, dtype=float)
    if dists.shape != (len(curves),) * 2:
        raise LengthMismatch("distance matrix does not match the curve count")
    x = curves.values
    gram = x @ x.T / curves.grid.m
    sq = np.diag(gram)
    i, j = _pairs(len(curves))
    hs2 = sq[i] ** 2 + sq[j] ** 2 - 2.0 * gram[i, j] ** 2
    return DissimilarityCloud(dists[i, j], np.sqrt(np.maximum(hs2, 0.0)))


# ---------------------------------------------------------------------------
# Empirical variograms
# ---------------------------------------------------------------------------

@dataclass
class EmpiricalVariogram:
    centers: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    dmax: float

    def __len__(self) -> int:
        return self.centers.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "gamma", "pairs"])
            for c, g, n in zip(self.centers, self.gamma, self.counts):
                w.writerow([repr(float(c)), repr(float(g)), int(n)])


@dataclass
class Binning:
    """Assignment of pairs to equal-width distance bins on ``(0, dmax]``.

    ``order`` sorts pairs by bin, ``starts`` marks where each retained bin
    begins in that order, ``centers`` is the mean pair distance in each
    retained bin.
    """

    order: np.ndarray
    starts: np.ndarray
    counts: np.ndarray
    centers: np.ndarray
    dmax: float

    @classmethod
    def from_distances(cls, distances, n_bins: int = DEFAULT_BINS) -> "Binning":
        if n_bins < 3:
            raise ValueError("at least 3 bins are required")
        distances = np.asarray(distances, dtype=float)
        if distances.size == 0:
            raise TooFewPairs("no pairs")
        dmax = float(distances.max())
        if dmax <= 0:
            raise TooFewPairs("all pairs at zero distance")
        width = dmax / n_bins
        idx = np.clip(np.ceil(distances / width).astype(int) - 1, 0, n_bins - 1)
        order = np.argsort(idx, kind="stable")
        counts_all = np.bincount(idx, minlength=n_bins)
        kept = np.flatnonzero(counts_all > 0)
        if kept.size == 0:
            raise TooFewPairs("every bin is empty")
        counts = counts_all[kept]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        centers = np.add.reduceat(distances[order], starts) / counts
        return cls(order, starts, counts, centers, dmax)

    def reduce(self, diff: np.ndarray, estimator: str) -> np.ndarray:
        """Per-bin estimates for ``diff`` of shape ``(P,)`` or ``(P, F)``.

        Returns shape ``(n_kept,)`` or ``(F, n_kept)``.
        """
        d = np.abs(diff[self.order])
        if estimator == "MT":
            g = np.add.reduceat(d * d, self.starts, axis=0)
            g = g / (self.counts if g.ndim == 1 else self.counts[:, None])
        else:
            s = np.add.reduceat(np.sqrt(d), self.starts, axis=0)
            cnt = self.counts if s.ndim == 1 else self.counts[:, None]
            g = (s / cnt) ** 4 / (CH_A + CH_B / cnt)
        return g if g.ndim == 1 else g.T


def empirical_variogram(cloud: DissimilarityCloud, estimator: str = "MT",
                        n_bins: int = DEFAULT_BINS) -> EmpiricalVariogram:
    """Binned Matheron (``MT``) or Cressie-Hawkins (``CH``) estimate.

    ``MT``: mean of squared dissimilarities in the bin.
    ``CH``: fourth power of the mean square-root dissimilarity, divided by
    ``0.457 + 0.494 / |N(d)|``.  Empty bins are dropped.
    """
    estimator = _estimator(estimator)
    binning = Binning.from_distances(cloud.distances, n_bins)
    gamma = binning.reduce(cloud.dissim, estimator)
    return EmpiricalVariogram(binning.centers, gamma, binning.counts, binning.dmax)


def field_variograms(fields, dists, estimator: str = "MT", n_bins: int = DEFAULT_BINS,
                     binning: Optional[Binning] = None, chunk: int = 256):
    """Empirical variograms of many scalar fields observed at the same sites.

    ``fields`` has shape ``(N, F)``.  Returns ``(binning, gamma)`` with
    ``gamma`` of shape ``(F, n_kept)``.
    """
    estimator = _estimator(estimator)
    fields = np.asarray(fields, dtype=float)
    if fields.ndim == 1:
        fields = fields[:, None]
    dists = np.asarray(dists, dtype=float)
    n = fields.shape[0]
    if dists.shape != (n, n):
        raise LengthMismatch(f"{n} sites vs distance matrix {dists.shape}")
    i, j = _pairs(n)
    if binning is None:
        binning = Binning.from_distances(dists[i, j], n_bins)
    out = np.empty((fields.shape[1], binning.counts.size))
    for a in range(0, fields.shape[1], chunk):
        block = fields[:, a:a + chunk]
        out[a:a + chunk] = binning.reduce(block[i] - block[j], estimator)
    return binning, out


# ---------------------------------------------------------------------------
# Model fitting
# ---------------------------------------------------------------------------

@dataclass
class VariogramFits:
    """Batch fit results in original units; ``ok`` marks structured fits."""

    kind: str
    c0: np.ndarray
    sigma2: np.ndarray
    rho: np.ndarray
    ok: np.ndarray
    converged: np.ndarray
    rss: np.ndarray
    flat_level: np.ndarray

    def model(self, f: int) -> CovModel:
        if self.ok[f]:
            return CovModel(self.kind, float(self.sigma2[f]), float(self.rho[f]), float(self.c0[f]))
        return CovModel(FLAT, float(self.flat_level[f]))

    def models(self) -> list:
        return [self.model(f) for f in range(self.ok.size)]


def _generic_fits(u, y, w, init, bounds, sat, kind, with_nugget):
    def resid(p, rows):
        if with_nugget:
            c0, s, r = p[:, 0:1], p[:, 1:2], p[:, 2:3]
        else:
            c0, s, r = 0.0, p[:, 0:1], p[:, 1:2]
        model = c0 + s * (1.0 - correlation_shape(kind, u[None, :] / r))
        return (model - y[rows]) * w

    def jac(p, rows):
        r = p[:, -1:]
        s = p[:, -2:-1]
        gv = correlation_shape(kind, u[None, :] / r)
        if kind == EXPONENTIAL:
            dr = -s * gv * u[None, :] / r ** 2
        else:
            dr = -2.0 * s * gv * u[None, :] ** 2 / r ** 3
        cols = [(1.0 - gv) * w, dr * w]
        if with_nugget:
            cols.insert(0, np.broadcast_to(w, gv.shape))
        return np.stack(cols, axis=2)

    return nls_fit_batch(resid, init, bounds, check_saturation=sat, jac_fn=jac)


def run_fits(u, y, w, init, bounds, sat, kind, with_nugget, compiled=True):
    """Weighted fits of ``c0 + s (1 - g(u / r))`` to the rows of ``y``.

    ``compiled=False`` runs the generic batched fitter instead of the
    compiled specialization; both implement the same algorithm.
    """
    if not compiled:
        return _generic_fits(u, y, w, init, bounds, sat, kind, with_nugget)
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    return fit_all(np.ascontiguousarray(u, dtype=float), np.ascontiguousarray(y, dtype=float),
                   np.ascontiguousarray(w, dtype=float), np.ascontiguousarray(init, dtype=float),
                   lower, upper, np.asarray(sat, dtype=np.bool_), kind == EXPONENTIAL,
                   with_nugget, np.asarray(RESTART_FACTORS), 200, 1e-10, 1e-10, 1e-10)


def fit_variograms(centers, gamma, counts, dmax: float, kind: str,
                   with_nugget: bool = False) -> VariogramFits:
    """Weighted NLS fits of ``c0 + sigma2 (1 - g(d / rho))`` to many variograms.

    Weights are the pair counts.  Each fit runs in units scaled by the
    largest distance and the largest bin value.  A fit counts as structured
    (``ok``) when it converged off its bounds, its range is at most
    ``MAX_RANGE_FACTOR * dmax``, the range is resolved by the first bin and
    the partial sill carries a non-negligible share of the total sill.
    """
    kind = _kind(kind)
    if kind == FLAT:
        raise ValueError("nothing to fit for the flat model")
    centers = np.asarray(centers, dtype=float)
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    counts = np.asarray(counts, dtype=float)
    nf, nb = gamma.shape
    if nb < 3:
        raise ValueError("at least 3 retained bins are required for a fit")
    flat_level = gamma @ counts / counts.sum()
    scale = gamma.max(axis=1)
    live = scale > 0
    y = np.where(live[:, None], gamma / np.where(live, scale, 1.0)[:, None], 0.0)
    u = centers / dmax
    w = np.sqrt(counts / counts.sum())

    if with_nugget:
        lower = np.array([0.0, 1e-6, 1e-3])
        upper = np.array([20.0, 20.0, 100.0])
        sat = [False, True, True]
    else:
        lower = np.array([1e-6, 1e-3])
        upper = np.array([20.0, 100.0])
        sat = [True, True]

    tail = y[:, nb - max(nb // 3, 1):].mean(axis=1)
    if with_nugget:
        c0i = np.clip(0.25 * y[:, 0], 0.0, 1.0)
        si = np.clip(tail - c0i, 1e-3, 10.0)
        init = np.column_stack([c0i, si, np.full(nf, 0.3)])
    else:
        init = np.column_stack([np.clip(tail, 1e-3, 10.0), np.full(nf, 0.3)])

    c0 = np.zeros(nf)
    sig = np.zeros(nf)
    rho = np.ones(nf)
    conv = np.zeros(nf, dtype=bool)
    rss = np.zeros(nf)
    idx = np.flatnonzero(live)
    if idx.size:
        x, cv, cost = run_fits(u, y[idx], w, init[idx], (lower, upper), sat, kind, with_nugget)
        if with_nugget:
            c0[idx], sig[idx], rho[idx] = x[:, 0], x[:, 1], x[:, 2]
        else:
            sig[idx], rho[idx] = x[:, 0], x[:, 1]
        conv[idx] = cv
        rss[idx] = 2.0 * cost * scale[idx] ** 2
    first = correlation_shape(kind, u[0] / rho)
    ok = (
        live
        & conv
        & (rho <= MAX_RANGE_FACTOR)
        & (first >= MIN_FIRST_BIN_CORR)
        & (sig >= MIN_STRUCTURED_SHARE * (sig + c0))
    )
    return VariogramFits(kind, c0 * scale, sig * scale, rho * dmax, ok, conv, rss, flat_level)


def fit_cov_model(emp: EmpiricalVariogram, kind: str = EXPONENTIAL,
                  with_nugget: bool = False) -> CovModel:
    """Fit a parametric variogram; falls back to the flat model.

    The flat model's ``sigma2`` is the pair-weighted mean bin level.
    """
    if len(emp) < 3:
        raise ValueError("at least 3 retained bins are required for a fit")
    fits = fit_variograms(emp.centers, emp.gamma[None, :], emp.counts, emp.dmax, kind, with_nugget)
    return fits.model(0)


def _aic_gain(rss_flat, rss, n_bins: int, extra_params: int):
    """Least-squares AIC of the flat fit minus that of a structured fit."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return n_bins * np.log(rss_flat / rss) - 2.0 * extra_params


def select_models(centers, gamma, counts, dmax: float,
                  kinds: Sequence[str] = (EXPONENTIAL, GAUSSIAN), with_nugget: bool = True,
                  parsimony: bool = False):
    """Per field, the structured fit with the lowest weighted RSS.

    With ``parsimony`` a structured fit must also beat the flat variogram
    on least-squares AIC over the bins, so that noise in the empirical
    variogram of a white field is not read as spatial structure.

    Returns ``(models, flat_mask)``; flat entries carry the mean bin level
    and are left for the caller to replace if another variance is wanted.
    """
    gamma = np.atleast_2d(gamma)
    counts = np.asarray(counts, dtype=float)
    fits = [fit_variograms(centers, gamma, counts, dmax, k, with_nugget) for k in kinds]
    w2 = counts / counts.sum()
    rss_flat = ((gamma - fits[0].flat_level[:, None]) ** 2 * w2).sum(axis=1)
    extra = 2 if with_nugget else 1
    models = []
    flat = np.zeros(gamma.shape[0], dtype=bool)
    for f in range(gamma.shape[0]):
        best = None
        for fit in fits:
            if fit.ok[f] and (best is None or fit.rss[f] < best.rss[f]):
                best = fit
        if parsimony and best is not None and \
                not _aic_gain(rss_flat[f], best.rss[f], counts.size, extra) > 0:
            best = None
        if best is None:
            flat[f] = True
            models.append(CovModel(FLAT, float(fits[0].flat_level[f])))
        else:
            models.append(best.model(f))
    return models, flat
