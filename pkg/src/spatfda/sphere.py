"""Locations on the unit sphere and chordal distances."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormat
from .numkernel import RngStream

MIN_SEPARATION = 1e-9
SAME_POINT_TOL = 1e-12


@dataclass(frozen=True)
class Location:
    """A point on the unit sphere, latitude and longitude in radians."""

    lat: float
    lon: float

    def __post_init__(self):
        if not -math.pi / 2 <= self.lat <= math.pi / 2:
            raise ValueError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        if not -math.pi < self.lon <= math.pi:
            raise ValueError(f"longitude {self.lon} outside (-pi, pi]")


def _wrap_lon(lon):
    lon = np.mod(np.asarray(lon, dtype=float) + math.pi, 2 * math.pi) - math.pi
    return np.where(lon <= -math.pi, lon + 2 * math.pi, lon)


class LocationSet:
    """``N`` distinct locations, stored as latitude/longitude arrays."""

    def __init__(self, lat, lon):
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        if lat.shape != lon.shape or lat.ndim != 1:
            raise ValueError("lat and lon must be 1-d arrays of equal length")
        if lat.size < 1:
            raise ValueError("at least one location is required")
        if np.any(np.abs(lat) > math.pi / 2 + 1e-12):
            raise ValueError("latitude outside [-pi/2, pi/2]")
        self.lat = np.clip(lat, -math.pi / 2, math.pi / 2)
        self.lon = _wrap_lon(lon)
        d = distance_matrix(self)
        np.fill_diagonal(d, np.inf)
        if lat.size > 1 and d.min() < MIN_SEPARATION:
            k, l = np.unravel_index(np.argmin(d), d.shape)
            raise ValueError(f"locations {k} and {l} coincide")

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg) -> "LocationSet":
        return cls(np.radians(lat_deg), np.radians(lon_deg))

    @classmethod
    def from_locations(cls, points) -> "LocationSet":
        points = list(points)
        return cls([p.lat for p in points], [p.lon for p in points])

    def __len__(self) -> int:
        return self.lat.size

    def __getitem__(self, k: int) -> Location:
        return Location(float(self.lat[k]), float(self.lon[k]))

    def __eq__(self, other) -> bool:
        # tolerant to the rounding of a degrees/radians round trip through CSV
        if not isinstance(other, LocationSet):
            return NotImplemented
        return (
            len(self) == len(other)
            and np.allclose(self.lat, other.lat, rtol=0.0, atol=SAME_POINT_TOL)
            and np.allclose(self.lon, other.lon, rtol=0.0, atol=SAME_POINT_TOL)
        )

    def subset(self, idx) -> "LocationSet":
        return LocationSet(self.lat[idx], self.lon[idx])

    def xyz(self) -> np.ndarray:
        cl = np.cos(self.lat)
        return np.column_stack([cl * np.cos(self.lon), cl * np.sin(self.lon), np.sin(self.lat)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lat_deg", "lon_deg"])
            for a, b in zip(np.degrees(self.lat), np.degrees(self.lon)):
                w.writerow([repr(float(a)), repr(float(b))])


def chordal_distance(a: Location, b: Location) -> float:
    """Straight-line distance through the unit sphere, in [0, 2]."""
    s1 = math.sin(0.5 * (a.lat - b.lat))
    s2 = math.sin(0.5 * (a.lon - b.lon))
    return 2.0 * math.sqrt(s1 * s1 + math.cos(a.lat) * math.cos(b.lat) * s2 * s2)


def distance_matrix(locs: LocationSet) -> np.ndarray:
    lat, lon = locs.lat, locs.lon
    s1 = np.sin(0.5 * (lat[:, None] - lat[None, :]))
    s2 = np.sin(0.5 * (lon[:, None] - lon[None, :]))
    d = 2.0 * np.sqrt(s1 ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * s2 ** 2)
    np.fill_diagonal(d, 0.0)
    return np.minimum(d, 2.0)


# Synthetic station layout: three dense continental clusters plus scattered
# points.  Centers in degrees (lat, lon), angular spread in degrees, share.
CLUSTERS = (
    ((50.0, 15.0), 8.0, 0.45),    # Europe
    ((35.0, 125.0), 10.0, 0.15),  # East Asia
    ((45.0, -95.0), 10.0, 0.10),  # North America
)


def _uniform_sphere(n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    u = rng.uniform((n, 2))
    z = 2.0 * u[:, 0] - 1.0
    lon = math.pi - 2.0 * math.pi * u[:, 1]  # (-pi, pi]
    return np.arcsin(z), lon


def _cluster(n: int, center_deg, spread_deg: float, rng: RngStream):
    lat0, lon0 = np.radians(center_deg)
    c = np.array([math.cos(lat0) * math.cos(lon0), math.cos(lat0) * math.sin(lon0), math.sin(lat0)])
    east = np.array([-math.sin(lon0), math.cos(lon0), 0.0])
    north = np.cross(c, east)
    z = rng.normals((n, 2)) * math.radians(spread_deg)
    p = c[None, :] + z[:, :1] * east[None, :] + z[:, 1:] * north[None, :]
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return np.arcsin(np.clip(p[:, 2], -1, 1)), np.arctan2(p[:, 1], p[:, 0])


def sample_locations(n: int, layout: str = "clustered", rng: RngStream | None = None,
                     path=None) -> LocationSet:
    """Draw ``n`` locations.

    ``uniform`` is area-uniform on the sphere.  ``clustered`` mimics an
    uneven station network: 45% of points around Europe, 15% around East
    Asia, 10% around North America, the rest scattered uniformly.
    ``file`` reads the first ``n`` rows of a ``lat_deg,lon_deg`` CSV.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if layout in ("file", "from-file"):
        locs = read_locations_csv(path)
        if len(locs) < n:
            raise FileFormat(f"{path}: {len(locs)} rows, {n} requested")
        return locs if len(locs) == n else locs.subset(np.arange(n))
    if rng is None:
        raise ValueError("random layouts need an RngStream")
    if layout == "uniform":
        lat, lon = _uniform_sphere(n, rng)
        return LocationSet(lat, lon)
    if layout != "clustered":
        raise ValueError(f"unknown layout {layout!r}")
    lats, lons = [], []
    used = 0
    for k, (center, spread, share) in enumerate(CLUSTERS):
        cnt = int(math.floor(share * n))
        if cnt:
            la, lo = _cluster(cnt, center, spread, rng.substream(k))
            lats.append(la)
            lons.append(lo)
            used += cnt
    la, lo = _uniform_sphere(n - used, rng.substream(len(CLUSTERS)))
    lats.append(la)
    lons.append(lo)
    return LocationSet(np.concatenate(lats), np.concatenate(lons))


def read_locations_csv(path) -> LocationSet:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise FileFormat(f"cannot read {path}: {exc}") from exc
    if not rows or [h.strip() for h in rows[0]] != ["lat_deg", "lon_deg"]:
        raise FileFormat(f"{path}: header must be lat_deg,lon_deg")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise FileFormat(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] != 2:
        raise FileFormat(f"{path}: expected two columns and at least one row")
    try:
        return LocationSet.from_degrees(data[:, 0], data[:, 1])
    except ValueError as exc:
        raise FileFormat(f"{path}: {exc}") from exc
