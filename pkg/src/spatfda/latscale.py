"""Latitude-dependent amplitude scaling of curves.

Observed curves are modelled as ``F(s; t) = G(L(s)) X(s; t)`` with
``G(L) = a + b cos(L)^c``.  ``G`` is fitted to per-station amplitude ratios
against a reference station and divided out to obtain ``X``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .curvegrid import CurveSet
from .errors import DomainError, NonPositiveScale
from .numkernel import nls_fit

A_BOUNDS = (-1.0, 2.0)
B_BOUNDS = (1e-9, 5.0)
C_BOUNDS = (0.1, 20.0)
MIN_POINTS = 4
MIN_LAT_SPAN = 0.3
MIN_REFERENCE = 1e-6


@dataclass(frozen=True)
class ScaleModel:
    """``G(L) = a + b cos(L)^c``; ``converged`` reports the fit status."""

    a: float
    b: float
    c: float
    converged: bool = True

    def __post_init__(self):
        if not self.b > 0 or not self.c > 0:
            raise ValueError("b and c must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ScaleModel":
        d = json.loads(text)
        return cls(float(d["a"]), float(d["b"]), float(d["c"]), bool(d.get("converged", True)))


def _raw_scale(a, b, c, lat):
    return a + b * np.cos(lat) ** c


def eval_scale(m: ScaleModel, lat):
    """``G`` at latitude(s) ``lat`` in radians."""
    lat = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat) > math.pi / 2 + 1e-12):
        raise DomainError("latitude outside [-pi/2, pi/2]")
    g = _raw_scale(m.a, m.b, m.c, np.clip(np.abs(lat), 0.0, math.pi / 2))
    if np.any(g <= 0):
        raise NonPositiveScale("scale function is not positive at every latitude")
    return float(g) if g.ndim == 0 else g


def scaling_ratios(curves: CurveSet, ref: int = 0) -> np.ndarray:
    """Time averages of ``F(s_k; t) / F(s_ref; t)`` for every station.

    The reference curve must stay above ``1e-6`` in absolute value.
    """
    f = curves.values
    den = f[ref]
    if np.any(np.abs(den) <= MIN_REFERENCE):
        raise DomainError("reference curve too close to zero for ratios")
    return np.mean(f / den[None, :], axis=1)


def fit_scale(lat, ratios) -> ScaleModel:
    """Nonlinear least-squares fit of ``a + b cos(L)^c`` to ratio pairs.

    Needs at least four points spanning 0.3 rad of latitude.  A fit that
    stalls or ends on a bound is returned with ``converged=False``.
    """
    lat = np.abs(np.asarray(lat, dtype=float))
    ratios = np.asarray(ratios, dtype=float)
    if lat.shape != ratios.shape or lat.ndim != 1:
        raise ValueError("lat and ratios must be 1-d arrays of equal length")
    if lat.size < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points")
    if lat.max() - lat.min() < MIN_LAT_SPAN:
        raise ValueError(f"latitudes must span at least {MIN_LAT_SPAN} rad")
    cl = np.cos(np.clip(lat, 0.0, math.pi / 2))
    lower = np.array([A_BOUNDS[0], B_BOUNDS[0], C_BOUNDS[0]])
    upper = np.array([A_BOUNDS[1], B_BOUNDS[1], C_BOUNDS[1]])

    def resid(p):
        return p[0] + p[1] * cl ** p[2] - ratios

    lo, hi = ratios.min(), ratios.max()
    init = np.clip([lo, max(hi - lo, 1e-3), 2.0], lower, upper)
    x, ok = nls_fit(resid, init, (lower, upper))
    return ScaleModel(float(x[0]), float(max(x[1], B_BOUNDS[0])), float(x[2]), ok)


def descale(curves: CurveSet, m: ScaleModel) -> CurveSet:
    """``X(s; t) = F(s; t) / G(L(s))``."""
    if curves.locations is None:
        raise ValueError("curves need locations")
    g = eval_scale(m, curves.locations.lat)
    return CurveSet(curves.grid, curves.values / np.atleast_1d(g)[:, None], curves.locations)


def scale(curves: CurveSet, m: ScaleModel) -> CurveSet:
    """``F(s; t) = G(L(s)) X(s; t)``."""
    if curves.locations is None:
        raise ValueError("curves need locations")
    g = eval_scale(m, curves.locations.lat)
    return CurveSet(curves.grid, curves.values * np.atleast_1d(g)[:, None], curves.locations)
