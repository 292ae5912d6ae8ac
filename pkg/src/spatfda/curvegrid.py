"""Curves sampled on a uniform midpoint grid over [0, 1].

Inner products and L1 distances use the midpoint rule, under which the
Fourier functions up to frequency below m/2 are exactly orthonormal.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FileFormat, GridMismatch, InvalidK


@dataclass(frozen=True)
class Grid:
    """Midpoint grid ``t_j = (j - 1/2) / m``, ``j = 1..m``."""

    m: int

    def __post_init__(self):
        if int(self.m) < 1:
            raise ValueError("grid needs at least one point")
        object.__setattr__(self, "m", int(self.m))

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.m) + 0.5) / self.m

    @property
    def spacing(self) -> float:
        return 1.0 / self.m


@dataclass(frozen=True)
class Curve:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.m,):
            raise GridMismatch(f"expected {self.grid.m} values, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Curve":
        return cls(grid, fn(grid.nodes))

    def __add__(self, other: "Curve") -> "Curve":
        _same_grid(self.grid, other.grid)
        return Curve(self.grid, self.values + other.values)

    def __sub__(self, other: "Curve") -> "Curve":
        _same_grid(self.grid, other.grid)
        return Curve(self.grid, self.values - other.values)

    def __mul__(self, k: float) -> "Curve":
        return Curve(self.grid, self.values * float(k))

    __rmul__ = __mul__

    def __neg__(self) -> "Curve":
        return Curve(self.grid, -self.values)

    def norm(self) -> float:
        return math.sqrt(inner_product(self, self))


@dataclass(frozen=True)
class BasisSet:
    """``K`` basis functions sampled on ``grid``, stored as a ``(K, m)`` array."""

    grid: Grid
    functions: np.ndarray

    @property
    def K(self) -> int:
        return self.functions.shape[0]

    def __getitem__(self, j: int) -> Curve:
        return Curve(self.grid, self.functions[j])

    def gram(self) -> np.ndarray:
        return self.functions @ self.functions.T / self.grid.m


@dataclass
class CurveSet:
    """``N`` curves on a shared grid, optionally attached to locations.

    ``values`` has shape ``(N, m)``; ``locations`` is a
    :class:`spatfda.sphere.LocationSet` of size ``N`` or ``None``.
    """

    grid: Grid
    values: np.ndarray
    locations: Optional[object] = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.m:
            raise GridMismatch(
                f"curves have {self.values.shape[1]} points, grid has {self.grid.m}"
            )
        if self.locations is not None and len(self.locations) != self.values.shape[0]:
            raise ValueError(
                f"{self.values.shape[0]} curves but {len(self.locations)} locations"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k: int) -> Curve:
        return Curve(self.grid, self.values[k])

    def shifted(self, curve: Curve) -> "CurveSet":
        """Every curve plus ``curve``."""
        _same_grid(self.grid, curve.grid)
        return CurveSet(self.grid, self.values + curve.values, self.locations)

    def centered(self, mean: Curve) -> "CurveSet":
        _same_grid(self.grid, mean.grid)
        return CurveSet(self.grid, self.values - mean.values, self.locations)

    def distances(self) -> np.ndarray:
        from .sphere import distance_matrix

        if self.locations is None:
            raise ValueError("curve set has no locations")
        return distance_matrix(self.locations)


def _same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise GridMismatch(f"grid with m={a.m} vs m={b.m}")


def inner_product(f: Curve, g: Curve) -> float:
    """Midpoint-rule approximation of the integral of ``f * g`` over [0, 1]."""
    _same_grid(f.grid, g.grid)
    return float(np.dot(f.values, g.values) / f.grid.m)


def l1_distance(f: Curve, g: Curve) -> float:
    """Midpoint-rule integral of ``|f - g|``."""
    _same_grid(f.grid, g.grid)
    return float(np.sum(np.abs(f.values - g.values)) / f.grid.m)


def default_K(m: int) -> int:
    """``1 + 4 * floor(sqrt(m))``, reduced to the largest odd count <= m."""
    k = 1 + 4 * int(math.isqrt(m))
    if k > m:
        k = m if m % 2 == 1 else m - 1
    return k


def fourier_basis(grid: Grid, K: Optional[int] = None) -> BasisSet:
    """Fourier basis ``1, sqrt2 sin(2 pi i t), sqrt2 cos(2 pi i t)``.

    Functions are ordered constant, then sine and cosine of frequency 1,
    then frequency 2, and so on up to ``(K - 1) / 2``.  On grids with
    ``m < 4K`` the sampled functions are re-orthonormalized.
    """
    if K is None:
        K = default_K(grid.m)
    K = int(K)
    if K < 1 or K % 2 == 0:
        raise InvalidK(f"K must be a positive odd count, got {K}")
    if K > grid.m:
        raise InvalidK(f"K={K} exceeds the grid size m={grid.m}")
    t = grid.nodes
    rows = [np.ones_like(t)]
    for i in range(1, (K - 1) // 2 + 1):
        rows.append(math.sqrt(2.0) * np.sin(2.0 * math.pi * i * t))
        rows.append(math.sqrt(2.0) * np.cos(2.0 * math.pi * i * t))
    functions = np.array(rows)
    if grid.m < 4 * K:
        functions = _orthonormalize(functions, grid.m)
    return BasisSet(grid, functions)


def _orthonormalize(functions: np.ndarray, m: int) -> np.ndarray:
    q, r = np.linalg.qr(functions.T / math.sqrt(m))
    q = q * np.sign(np.diag(r))
    return q.T * math.sqrt(m)


def project_coeffs(x: Curve, basis: BasisSet) -> np.ndarray:
    """Coefficients ``<B_j, x>``, ``j = 1..K``."""
    _same_grid(x.grid, basis.grid)
    return basis.functions @ x.values / basis.grid.m


def project_many(values: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Coefficients of each row of an ``(N, m)`` array, shape ``(N, K)``."""
    values = np.atleast_2d(values)
    if values.shape[1] != basis.grid.m:
        raise GridMismatch("values and basis live on different grids")
    return values @ basis.functions.T / basis.grid.m


def synthesize(coeffs, basis: BasisSet) -> Curve:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.K,):
        raise ValueError(f"expected {basis.K} coefficients")
    return Curve(basis.grid, coeffs @ basis.functions)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_curves_csv(path, values, locations=None) -> None:
    """One row per curve; header ``t_1..t_m`` plus ``lat_deg,lon_deg`` when
    locations are given."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    header = [f"t_{j + 1}" for j in range(values.shape[1])]
    if locations is not None:
        header += ["lat_deg", "lon_deg"]
        lat = np.degrees(locations.lat)
        lon = np.degrees(locations.lon)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, row in enumerate(values):
            out = [repr(float(x)) for x in row]
            if locations is not None:
                out += [repr(float(lat[k])), repr(float(lon[k]))]
            w.writerow(out)


def read_curves_csv(path) -> CurveSet:
    """Read a curve CSV written by :func:`write_curves_csv`."""
    from .sphere import LocationSet

    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FileFormat(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FileFormat(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_loc = header[-2:] == ["lat_deg", "lon_deg"]
    tcols = header[:-2] if has_loc else header
    if not tcols or any(h != f"t_{j + 1}" for j, h in enumerate(tcols)):
        raise FileFormat(f"{path}: header must be t_1..t_m[,lat_deg,lon_deg]")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FileFormat(f"{path}: no curves")
    try:
        data = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise FileFormat(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FileFormat(f"{path}: ragged rows")
    grid = Grid(len(tcols))
    locations = None
    if has_loc:
        locations = LocationSet.from_degrees(data[:, -2], data[:, -1])
        data = data[:, :-2]
    return CurveSet(grid, data, locations)
