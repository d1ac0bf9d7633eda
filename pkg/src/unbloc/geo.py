"""Coordinates and the anchor-centred class partition.

Class centres sit on a hexagonal lattice with spacing ``D``; each class is a
disk of radius ``r`` around its centre. ``D >= sqrt(3) * r`` keeps the
hexagonal cells covered, and ``x = D - sqrt(3) * r`` is the gap between
neighbouring classes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

R_EARTH = 6_371_000.0
SQRT3 = math.sqrt(3.0)


class GeometryError(ValueError):
    """Raised for partitions or projections that violate the geometry rules."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise GeometryError(f"invalid WGS-84 point ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class PlanarPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite planar point ({self.x}, {self.y})")

    def dist(self, other: "PlanarPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


def project(origin: GeoPoint, p: GeoPoint) -> PlanarPoint:
    """Equirectangular projection of ``p`` into the metric frame at ``origin``."""
    dlat = p.lat - origin.lat
    if abs(dlat) >= 1.0:
        raise GeometryError(f"point {p} is outside the local frame of {origin}")
    dlon = (p.lon - origin.lon + 180.0) % 360.0 - 180.0
    x = R_EARTH * math.cos(math.radians(origin.lat)) * math.radians(dlon)
    y = R_EARTH * math.radians(dlat)
    return PlanarPoint(x, y)


def unproject(origin: GeoPoint, q: PlanarPoint) -> GeoPoint:
    """Inverse of :func:`project`."""
    lat = origin.lat + math.degrees(q.y / R_EARTH)
    lon = origin.lon + math.degrees(q.x / (R_EARTH * math.cos(math.radians(origin.lat))))
    lon = (lon + 180.0) % 360.0 - 180.0
    return GeoPoint(lat, lon)


@dataclass(frozen=True)
class ClassPartition:
    origin: GeoPoint
    centers: tuple[PlanarPoint, ...]
    radius_r: float
    spacing_D: float

    def __post_init__(self):
        if len(self.centers) < 1:
            raise GeometryError("partition needs at least one class")
        if self.radius_r <= 0 or self.spacing_D <= 0:
            raise GeometryError("radius and spacing must be positive")
        # relative slack so D == sqrt(3) * r round-trips through JSON
        if self.spacing_D < SQRT3 * self.radius_r * (1.0 - 1e-12):
            raise GeometryError(
                f"D={self.spacing_D} < sqrt(3)*r={SQRT3 * self.radius_r}: classes cannot cover the region"
            )

    @property
    def gap_x(self) -> float:
        return max(0.0, self.spacing_D - SQRT3 * self.radius_r)

    @property
    def n_classes(self) -> int:
        return len(self.centers)

    def center_array(self) -> np.ndarray:
        return np.array([[c.x, c.y] for c in self.centers], dtype=float)

    def to_dict(self) -> dict:
        return {
            "origin": {"lat": self.origin.lat, "lon": self.origin.lon},
            "D_m": self.spacing_D,
            "r_m": self.radius_r,
            "centers": [{"x": c.x, "y": c.y} for c in self.centers],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassPartition":
        try:
            return cls(
                origin=GeoPoint(float(doc["origin"]["lat"]), float(doc["origin"]["lon"])),
                centers=tuple(PlanarPoint(float(c["x"]), float(c["y"])) for c in doc["centers"]),
                radius_r=float(doc["r_m"]),
                spacing_D=float(doc["D_m"]),
            )
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"malformed partition document: {exc!r}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "ClassPartition":
        return cls.from_dict(json.loads(text))


def hex_lattice(n: int, spacing: float) -> list[tuple[float, float]]:
    """First ``n`` hexagonal lattice sites ordered by distance from the origin, then angle."""
    rings = 0
    while 1 + 3 * rings * (rings + 1) < n:
        rings += 1
    # sites within hex-distance ``rings + 1`` cover every Euclidean shell we need
    k = rings + 1
    sites = []
    for i in range(-2 * k, 2 * k + 1):
        for j in range(-2 * k, 2 * k + 1):
            x = spacing * (i + 0.5 * j)
            y = spacing * (SQRT3 / 2.0) * j
            d = math.hypot(x, y)
            ang = math.atan2(y, x) % (2.0 * math.pi)
            sites.append((round(d / spacing, 9), round(ang, 9), x, y))
    sites.sort()
    return [(0.0, 0.0) if s[0] == 0 else (s[2], s[3]) for s in sites[:n]]


def make_partition(origin: GeoPoint, n_classes: int, spacing_D: float, radius_r: float) -> ClassPartition:
    """Lay ``n_classes`` centres on a hexagonal lattice grown in rings around ``origin``."""
    if n_classes < 1:
        raise GeometryError(f"need at least one class, got {n_classes}")
    centers = tuple(PlanarPoint(x, y) for x, y in hex_lattice(n_classes, spacing_D))
    return ClassPartition(origin=origin, centers=centers, radius_r=radius_r, spacing_D=spacing_D)


def assign_class(part: ClassPartition, p: PlanarPoint) -> Optional[int]:
    """Index of the nearest centre within ``radius_r`` of ``p``; ``None`` in the gaps."""
    d = np.hypot(*(part.center_array() - p.as_array()).T)
    i = int(np.argmin(d))
    return i if d[i] <= part.radius_r else None
