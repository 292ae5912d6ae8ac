"""Simulated spatial functional data and replicated estimator comparisons.

Three data-generating processes are provided:

* mean study: ``X(s; t) = mu(t) + xi_1(s) e_1(t) + xi_2(s) e_2(t)`` with
  ``e_1 = sqrt2 sin(12 pi t)``, ``e_2 = sqrt2 sin(pi t)``;
* FPC study: ``X = xi_1 (e_1 + e_2) / sqrt2 + xi_2 e_3`` with sines of
  frequency 7, 2 and 4.5 cycles;
* test study: seven score fields on ``X`` and one on ``Y`` with fitted
  models taken from a real-data analysis, optionally coupling one ``xi``
  field with ``eta``.

Score fields are zero-mean Gaussian random fields with exponential,
Gaussian or flat covariance in chordal distance.  Studies are
deterministic functions of their configuration: locations are drawn once
from the master seed, replication ``r`` uses its own substream.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corr_test import DEFAULT_REPS, METHODS, fit_side, test_from_fits
from .curvegrid import Curve, CurveSet, Grid, fourier_basis, l1_distance
from .errors import SpatFdaError
from .numkernel import RngStream, jittered_cholesky
from .spatial_fpc import estimate_fpc_cm2, estimate_fpc_cm3, standard_fpc
from .spatial_mean import (
    estimate_mean_m1,
    estimate_mean_m2,
    estimate_mean_m3,
    fit_pointwise,
    sample_mean,
)
from .sphere import LocationSet, distance_matrix, sample_locations
from .variogram import EXPONENTIAL, FLAT, GAUSSIAN, CovModel

log = logging.getLogger(__name__)

DEFAULT_M = 336
SQRT2 = math.sqrt(2.0)

# (sigma, rho) of the two score fields in the mean and FPC studies
SCORE_PARAMS = ((1.0, math.pi / 6), (0.1, math.pi / 4))

# fitted score models of the real-data analysis: eta, then xi_1..xi_7
ETA_MODEL = CovModel(GAUSSIAN, 5.99, 0.32)
XI_MODELS = (
    CovModel(GAUSSIAN, 20.05, 0.12),
    CovModel(FLAT, 3.30),
    CovModel(EXPONENTIAL, 2.63, 0.16),
    CovModel(GAUSSIAN, 2.66, 0.18),
    CovModel(FLAT, 2.74),
    CovModel(GAUSSIAN, 0.85, 0.17, c0=0.16),
    CovModel(FLAT, 1.22),
)


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

def sine(grid: Grid, cycles: float) -> np.ndarray:
    """``sqrt2 sin(2 pi cycles t)`` on the grid."""
    return SQRT2 * np.sin(2.0 * math.pi * cycles * grid.nodes)


def mean_curve(grid: Grid, kind: str, a: Optional[float] = None) -> Curve:
    """``a sqrt2 sin(6 pi t)`` (``fourier``, a=2), ``a sqrt(t) sin(6 pi t)``
    (``sqrt``, a=1) or zero (``none``)."""
    t = grid.nodes
    if kind == "fourier":
        a = 2.0 if a is None else a
        return Curve(grid, a * SQRT2 * np.sin(6.0 * math.pi * t))
    if kind == "sqrt":
        a = 1.0 if a is None else a
        return Curve(grid, a * np.sqrt(t) * np.sin(6.0 * math.pi * t))
    if kind == "none":
        return Curve(grid, np.zeros(grid.m))
    raise ValueError(f"unknown mean kind {kind!r}")


def mean_study_components(grid: Grid) -> np.ndarray:
    return np.array([sine(grid, 6.0), sine(grid, 0.5)])


def fpc_study_components(grid: Grid) -> np.ndarray:
    """Rows ``v_1 = (e_1 + e_2) / sqrt2`` and ``v_2 = e_3``."""
    e1, e2, e3 = sine(grid, 7.0), sine(grid, 2.0), sine(grid, 4.5)
    return np.array([(e1 + e2) / SQRT2, e3])


def test_study_components(grid: Grid, p: int = 7):
    """Default component curves for the test study.

    ``v_i = sqrt2 sin(2 pi i t)``, ``i = 1..p``, and the normalized linear
    function ``u_1 = sqrt3 (2t - 1)``.
    """
    v = np.array([sine(grid, i) for i in range(1, p + 1)])
    u = math.sqrt(3.0) * (2.0 * grid.nodes - 1.0)
    return v, u[None, :]


# ---------------------------------------------------------------------------
# Random fields
# ---------------------------------------------------------------------------

def _factor(model: CovModel, dists) -> Optional[np.ndarray]:
    if model.total_sill == 0.0:
        return None
    return jittered_cholesky(model.covariance(dists))[0]


def gen_grf_scores(model: CovModel, locs: LocationSet, rng: RngStream) -> np.ndarray:
    """Zero-mean Gaussian field with covariance ``model`` at ``locs``."""
    fac = _factor(model, distance_matrix(locs))
    n = len(locs)
    if fac is None:
        return np.zeros(n)
    return fac @ rng.normals(n)


class FieldSampler:
    """Draws several independent fields at fixed locations.

    Cholesky factors are computed once and reused across replications.
    """

    def __init__(self, models: Sequence[CovModel], locs: LocationSet):
        self.models = tuple(models)
        self.locs = locs
        self.dists = distance_matrix(locs)
        self.factors = [_factor(m, self.dists) for m in self.models]

    @property
    def n(self) -> int:
        return len(self.locs)

    def transform(self, i: int, z: np.ndarray) -> np.ndarray:
        fac = self.factors[i]
        return np.zeros(self.n) if fac is None else fac @ z

    def draw(self, rng: RngStream) -> np.ndarray:
        """Fields as columns, shape ``(N, len(models))``."""
        z = rng.normals((len(self.models), self.n))
        return np.column_stack([self.transform(i, z[i]) for i in range(len(self.models))])


# ---------------------------------------------------------------------------
# Data-generating processes
# ---------------------------------------------------------------------------

@dataclass
class DgpSpec:
    """Parameters of one data-generating process.

    ``params`` holds ``(sigma, rho)`` per score field (``sigma`` a standard
    deviation), used by the mean and FPC studies with ``cov_kind``.  The
    test study uses ``XI_MODELS``/``ETA_MODEL``.
    """

    kind: str = "mean-study"
    mean_kind: str = "sqrt"
    cov_kind: str = EXPONENTIAL
    params: tuple = SCORE_PARAMS
    n: int = 100
    layout: str = "clustered"
    rho_dep: float = 0.0
    dep_index: int = 1
    m: int = DEFAULT_M
    mean_amplitude: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("mean-study", "fpc-study", "test-study"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if not 0.0 <= self.rho_dep < 1.0:
            raise ValueError("rho_dep must lie in [0, 1)")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        for s, r in self.params:
            if s < 0 or r <= 0:
                raise ValueError("score parameters must be positive")
        if self.kind == "test-study" and self.rho_dep > 0 and not 1 <= self.dep_index <= len(XI_MODELS):
            raise ValueError(f"dep_index must be in 1..{len(XI_MODELS)}")

    @property
    def grid(self) -> Grid:
        return Grid(self.m)

    def score_models(self) -> list:
        if self.kind == "test-study":
            return list(XI_MODELS)
        return [CovModel(self.cov_kind, s * s, r) for s, r in self.params]


def gen_mean_dgp(spec: DgpSpec, rng: RngStream, locs: Optional[LocationSet] = None,
                 sampler: Optional[FieldSampler] = None) -> CurveSet:
    """Curves ``mu + xi_1 e_1 + xi_2 e_2`` at ``locs`` (drawn from ``rng`` if absent)."""
    grid = spec.grid
    if sampler is None:
        if locs is None:
            locs = sample_locations(spec.n, spec.layout, rng.substream(0))
        sampler = FieldSampler(spec.score_models(), locs)
    xi = sampler.draw(rng.substream(1))
    mu = mean_curve(grid, spec.mean_kind, spec.mean_amplitude)
    comps = mean_study_components(grid)[: xi.shape[1]]
    return CurveSet(grid, mu.values[None, :] + xi @ comps, sampler.locs)


def gen_fpc_dgp(locs: LocationSet, rng: RngStream, spec: Optional[DgpSpec] = None,
                sampler: Optional[FieldSampler] = None) -> CurveSet:
    """Curves ``xi_1 v_1 + xi_2 v_2`` with independent score fields."""
    spec = DgpSpec(kind="fpc-study") if spec is None else spec
    if sampler is None:
        sampler = FieldSampler(spec.score_models(), locs)
    xi = sampler.draw(rng.substream(1))
    return CurveSet(spec.grid, xi @ fpc_study_components(spec.grid), sampler.locs)


@dataclass
class PairedCurveSets:
    x: CurveSet
    y: CurveSet

    def __post_init__(self):
        if not self.x.locations == self.y.locations:
            raise ValueError("paired samples must share their locations")


def gen_test_dgp(spec: DgpSpec, fpc_curves_x, fpc_curve_y, rng: RngStream,
                 locs: Optional[LocationSet] = None,
                 sampler: Optional[FieldSampler] = None) -> PairedCurveSets:
    """Paired samples ``X = sum xi_i v_i``, ``Y = eta u_1``.

    With ``rho_dep > 0`` the field ``xi_{dep_index}`` and ``eta`` are built
    from the same pair of standard normal vectors with correlation
    ``rho_dep``, each transformed by its own Cholesky factor.
    ``sampler`` holds the models in the order ``xi_1..xi_p, eta``.
    """
    v = np.atleast_2d(np.asarray(fpc_curves_x, dtype=float))
    u = np.atleast_2d(np.asarray(fpc_curve_y, dtype=float))
    p = v.shape[0]
    if sampler is None:
        if locs is None:
            locs = sample_locations(spec.n, spec.layout, rng.substream(0))
        sampler = FieldSampler(list(XI_MODELS[:p]) + [ETA_MODEL], locs)
    n = sampler.n
    z = rng.substream(1).normals((p + 1, n))
    if spec.rho_dep > 0:
        i = spec.dep_index - 1
        r = spec.rho_dep
        z[p] = r * z[i] + math.sqrt(1.0 - r * r) * z[p]
    xi = np.column_stack([sampler.transform(i, z[i]) for i in range(p)])
    eta = sampler.transform(p, z[p])
    grid = Grid(v.shape[1])
    x = CurveSet(grid, xi @ v, sampler.locs)
    y = CurveSet(grid, eta[:, None] @ u, sampler.locs)
    return PairedCurveSets(x, y)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class Accumulator:
    """Running sum and sum of squares of a per-replication error."""

    total: float = 0.0
    total_sq: float = 0.0
    count: int = 0

    def add(self, x: float) -> None:
        self.total += x
        self.total_sq += x * x
        self.count += 1

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else float("nan")

    @property
    def sd(self) -> float:
        if self.count < 2:
            return float("nan")
        var = (self.total_sq - self.count * self.mean ** 2) / (self.count - 1)
        return math.sqrt(max(var, 0.0))

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.count) if self.count else float("nan")


@dataclass
class ExperimentReport:
    """Rows of summary statistics plus run metadata.

    Error studies have rows ``{method, target, mean_L, se_L, reps,
    failures}``; size/power studies have rows ``{method, p, rho_dep,
    dep_index, alpha, rate, mc_se, runs, failures}``.
    """

    kind: str
    rows: list
    config: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def row(self, **match) -> dict:
        for r in self.rows:
            if all(r.get(k) == v for k, v in match.items()):
                return r
        raise KeyError(match)

    def to_csv(self, path) -> None:
        keys = list(self.rows[0].keys()) if self.rows else []
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(r)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "rows": self.rows}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def aligned_l1(est: np.ndarray, truth: np.ndarray, grid: Grid) -> float:
    """``int |v_hat - v|`` after flipping ``v_hat`` to agree in sign with ``v``."""
    if np.dot(est, truth) < 0:
        est = -est
    return l1_distance(Curve(grid, est), Curve(grid, truth))


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

MEAN_METHODS = ("M1a", "M1b", "M2", "M3", "simple")
FPC_METHODS = ("CM2", "CM3", "standard")


@dataclass
class MeanStudyConfig:
    n: int = 100
    reps: int = 200
    seed: int = 0
    layout: str = "clustered"
    mean_kind: str = "sqrt"
    cov_kind: str = EXPONENTIAL
    estimator: str = "MT"
    methods: tuple = MEAN_METHODS
    m: int = DEFAULT_M
    K: Optional[int] = None
    location_file: Optional[str] = None

    def validate(self, min_reps: int = 1) -> None:
        if self.reps < min_reps:
            raise ValueError(f"reps must be at least {min_reps}")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        bad = set(self.methods) - set(MEAN_METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")


@dataclass
class FpcStudyConfig:
    n: int = 100
    reps: int = 200
    seed: int = 0
    layout: str = "clustered"
    cov_kind: str = EXPONENTIAL
    estimator: str = "CH"
    methods: tuple = FPC_METHODS
    m: int = DEFAULT_M
    K: Optional[int] = None
    location_file: Optional[str] = None

    def validate(self, min_reps: int = 1) -> None:
        if self.reps < min_reps:
            raise ValueError(f"reps must be at least {min_reps}")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        bad = set(self.methods) - set(FPC_METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")


@dataclass
class TestStudyConfig:
    """Size (``rho_grid = (0,)``) or power study of the correlation test.

    Every run generates ``X`` from ``p_gen`` components (at least
    ``max(p_grid)``), fits the pipeline once with ``max(p_grid)`` components
    and tests with each ``p`` in ``p_grid`` using the leading components.
    """

    __test__ = False

    n: int = 32
    runs: int = 2000
    seed: int = 0
    layout: str = "clustered"
    p_grid: tuple = (1, 2, 3, 4, 5, 6, 7)
    p_gen: int = 7
    rho_grid: tuple = (0.0,)
    dep_index: int = 1
    alpha: float = 0.05
    mc_reps: int = DEFAULT_REPS
    methods: tuple = METHODS
    estimator: str = "MT"
    kind: str = EXPONENTIAL
    mean_method: str = "M2"
    fpc_method: str = "CM2"
    sm_mode: str = "gaussian"
    parsimony: bool = False
    m: int = DEFAULT_M
    location_file: Optional[str] = None

    def validate(self, min_runs: int = 1) -> None:
        if self.runs < min_runs:
            raise ValueError(f"runs must be at least {min_runs}")
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if not self.p_grid or min(self.p_grid) < 1 or max(self.p_grid) > len(XI_MODELS):
            raise ValueError(f"p values must lie in 1..{len(XI_MODELS)}")
        if not max(self.p_grid) <= self.p_gen <= len(XI_MODELS):
            raise ValueError(f"p_gen must lie in max(p_grid)..{len(XI_MODELS)}")
        if self.dep_index > self.p_gen and any(r > 0 for r in self.rho_grid):
            raise ValueError("dep_index exceeds p_gen")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for r in self.rho_grid:
            if not 0 <= r < 1:
                raise ValueError("rho_dep values must lie in [0, 1)")


def _locations(cfg, master: RngStream) -> LocationSet:
    if cfg.location_file:
        return sample_locations(cfg.n, "file", path=cfg.location_file)
    return sample_locations(cfg.n, cfg.layout, master.substream(0))


def _error_rows(acc: dict, failures: dict) -> list:
    rows = []
    for (method, target), a in acc.items():
        rows.append({"method": method, "target": target, "mean_L": a.mean, "se_L": a.se,
                     "reps": a.count, "failures": failures.get(method, 0)})
    return rows


def mean_estimate(data: CurveSet, method: str, estimator: str, kind: str, dists, basis,
                  cache: Optional[dict] = None) -> Curve:
    """One mean estimate; pass the same ``cache`` to let M1a and M1b share fits."""
    if method in ("M1a", "M1b"):
        cache = {} if cache is None else cache
        if "m1" not in cache:
            cache["m1"] = fit_pointwise(data, estimator, kind, dists)
        return estimate_mean_m1(data, method[-1], estimator, kind, dists, fits=cache["m1"])
    if method == "M2":
        return estimate_mean_m2(data, estimator, kind, dists)
    if method == "M3":
        return estimate_mean_m3(data, estimator=estimator, kind=kind, dists=dists, basis=basis)
    if method == "simple":
        return sample_mean(data)
    raise ValueError(f"unknown mean method {method!r}")


def run_mean_study(cfg: MeanStudyConfig) -> ExperimentReport:
    """Integrated absolute error of each mean estimator over replications."""
    cfg.validate()
    master = RngStream(cfg.seed)
    spec = DgpSpec("mean-study", cfg.mean_kind, cfg.cov_kind, n=cfg.n, layout=cfg.layout, m=cfg.m)
    locs = _locations(cfg, master)
    sampler = FieldSampler(spec.score_models(), locs)
    basis = fourier_basis(spec.grid, cfg.K)
    mu = mean_curve(spec.grid, spec.mean_kind)
    acc = {(mth, "mean"): Accumulator() for mth in cfg.methods}
    raw = {mth: [] for mth in cfg.methods}
    failures = {}
    reps_stream = master.substream(1)
    for r in range(cfg.reps):
        data = gen_mean_dgp(spec, reps_stream.substream(r), sampler=sampler)
        cache = {}
        for method in cfg.methods:
            try:
                est = mean_estimate(data, method, cfg.estimator, cfg.cov_kind, sampler.dists, basis, cache)
            except SpatFdaError as exc:
                log.warning("replication %d, %s failed: %s", r, method, exc)
                failures[method] = failures.get(method, 0) + 1
                continue
            err = l1_distance(est, mu)
            acc[(method, "mean")].add(err)
            raw[method].append(err)
    return ExperimentReport("mean-study", _error_rows(acc, failures), _config_dict(cfg), raw)


def fpc_estimates(data: CurveSet, methods, estimator: str, kind: str, dists, basis, p: int = 2) -> dict:
    out = {}
    for method in methods:
        if method == "CM2":
            out[method] = estimate_fpc_cm2(data, p=p, estimator=estimator, kind=kind, dists=dists, basis=basis)
        elif method == "CM3":
            out[method] = estimate_fpc_cm3(data, p=p, estimator=estimator, kind=kind, dists=dists, basis=basis)
        else:
            out[method] = standard_fpc(data, p=p, basis=basis)
    return out


def run_fpc_study(cfg: FpcStudyConfig) -> ExperimentReport:
    """Integrated absolute error of the first two estimated components.

    The zero-mean data are passed to the estimators without centering.
    """
    cfg.validate()
    master = RngStream(cfg.seed)
    spec = DgpSpec("fpc-study", "none", cfg.cov_kind, n=cfg.n, layout=cfg.layout, m=cfg.m)
    locs = _locations(cfg, master)
    sampler = FieldSampler(spec.score_models(), locs)
    basis = fourier_basis(spec.grid, cfg.K)
    truth = fpc_study_components(spec.grid)
    acc = {(mth, f"v{j + 1}"): Accumulator() for mth in cfg.methods for j in range(2)}
    raw = {f"{mth}:v{j + 1}": [] for mth in cfg.methods for j in range(2)}
    failures = {}
    reps_stream = master.substream(1)
    for r in range(cfg.reps):
        data = gen_fpc_dgp(locs, reps_stream.substream(r), spec, sampler)
        for method in cfg.methods:
            try:
                est = fpc_estimates(data, [method], cfg.estimator, cfg.cov_kind, sampler.dists, basis)[method]
            except SpatFdaError as exc:
                log.warning("replication %d, %s failed: %s", r, method, exc)
                failures[method] = failures.get(method, 0) + 1
                continue
            for j in range(2):
                err = aligned_l1(est.components[j], truth[j], spec.grid)
                acc[(method, f"v{j + 1}")].add(err)
                raw[f"{method}:v{j + 1}"].append(err)
    return ExperimentReport("fpc-study", _error_rows(acc, failures), _config_dict(cfg), raw)


def run_size_power_study(cfg: TestStudyConfig) -> ExperimentReport:
    """Rejection rates of the correlation test at level ``alpha``.

    One row per (method, p, rho_dep).  ``mc_se`` is the binomial standard
    error ``sqrt(rate (1 - rate) / runs)``.
    """
    cfg.validate()
    master = RngStream(cfg.seed)
    grid = Grid(cfg.m)
    pmax = max(cfg.p_grid)
    v, u = test_study_components(grid, cfg.p_gen)
    locs = _locations(cfg, master)
    sampler = FieldSampler(list(XI_MODELS[:cfg.p_gen]) + [ETA_MODEL], locs)
    dists = sampler.dists
    basis = fourier_basis(grid)
    kw = dict(dists=dists, mean_method=cfg.mean_method, fpc_method=cfg.fpc_method,
              estimator=cfg.estimator, kind=cfg.kind, basis=basis, parsimony=cfg.parsimony)
    counts = {}
    done = {}
    failures = {}
    for g, rho in enumerate(cfg.rho_grid):
        spec = DgpSpec("test-study", "none", n=cfg.n, layout=cfg.layout, rho_dep=rho,
                       dep_index=cfg.dep_index, m=cfg.m)
        runs_stream = master.substream(1 + g)
        for run in range(cfg.runs):
            rs = runs_stream.substream(run)
            pair = gen_test_dgp(spec, v, u, rs, sampler=sampler)
            try:
                xs = fit_side(pair.x, pmax, **kw)
                ys = fit_side(pair.y, 1, **kw)
            except SpatFdaError as exc:
                log.warning("rho %.2f run %d: fit failed: %s", rho, run, exc)
                failures[rho] = failures.get(rho, 0) + 1
                continue
            for p in cfg.p_grid:
                if p > xs.fpcs.p:
                    failures[(rho, p)] = failures.get((rho, p), 0) + 1
                    continue
                try:
                    res = test_from_fits(xs.truncated(p), ys, dists, cfg.methods, cfg.mc_reps,
                                         rs.substream(100 + p), cfg.sm_mode).results
                except SpatFdaError as exc:
                    log.warning("rho %.2f run %d p %d: test failed: %s", rho, run, p, exc)
                    failures[(rho, p)] = failures.get((rho, p), 0) + 1
                    continue
                for method, tr in res.items():
                    key = (method, p, rho)
                    counts[key] = counts.get(key, 0) + int(tr.p_value <= cfg.alpha)
                    done[key] = done.get(key, 0) + 1
    rows = []
    for rho in cfg.rho_grid:
        for p in cfg.p_grid:
            for method in cfg.methods:
                key = (method, p, rho)
                k = done.get(key, 0)
                rate = counts.get(key, 0) / k if k else float("nan")
                rows.append({
                    "method": method, "p": p, "rho_dep": rho, "dep_index": cfg.dep_index,
                    "alpha": cfg.alpha, "rate": rate,
                    "mc_se": math.sqrt(rate * (1 - rate) / k) if k else float("nan"),
                    "runs": k,
                    "failures": failures.get(rho, 0) + failures.get((rho, p), 0),
                })
    kind = "power-study" if any(r > 0 for r in cfg.rho_grid) else "size-study"
    return ExperimentReport(kind, rows, _config_dict(cfg))


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
