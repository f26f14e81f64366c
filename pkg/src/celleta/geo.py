"""Spherical geometry and grid-cell arithmetic.

Angles enter in degrees and are converted to radians internally.  The
distance, midpoint and bearing formulas use latitude as the "cos(lat1) *
cos(lat2)" term of the haversine expression.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, DegenerateSegment, NonPositiveDuration, OutOfBounds, ValidationError

EARTH_RADIUS = 6_371_000.0  # m, mean radius
SECONDS_PER_DAY = 86_400
MAX_SUBDIVISION_DEPTH = 32
# sub-segments whose endpoints lie within this many degrees of a shared cell's
# closed box stop splitting; half-open cells alone never terminate bisection
BOUNDARY_TOL_DEG = 1e-9
_SNAP = 1e-9


class CompassDirection(enum.IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7


DIRECTIONS = tuple(CompassDirection)


@dataclass(frozen=True)
class GpsPoint:
    lat: float
    lon: float
    t: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")
        if self.t < 0:
            raise ValidationError(f"negative timestamp {self.t}")


@dataclass(frozen=True)
class GridSpec:
    """I x J cells of ``phi`` degrees anchored at (lat_min, lon_min), T intervals a day."""

    lat_min: float
    lon_min: float
    phi: float
    rows: int
    cols: int
    intervals: int = 96
    tz_offset: int = 0  # seconds added to UTC to get local time

    def __post_init__(self):
        if not self.phi > 0:
            raise BadConfig("splitting factor phi must be positive")
        if self.rows < 1 or self.cols < 1 or self.intervals < 1:
            raise BadConfig("rows, cols and intervals must all be >= 1")
        if SECONDS_PER_DAY % self.intervals:
            raise BadConfig(f"T={self.intervals} does not divide 86400")

    @property
    def interval_seconds(self) -> int:
        return SECONDS_PER_DAY // self.intervals

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell_bounds(self, cell: "CellIndex") -> tuple[float, float, float, float]:
        lat0 = self.lat_min + (cell.h - 1) * self.phi
        lon0 = self.lon_min + (cell.w - 1) * self.phi
        return lat0, lat0 + self.phi, lon0, lon0 + self.phi

    def cell_center(self, cell: "CellIndex") -> tuple[float, float]:
        lat0, lat1, lon0, lon1 = self.cell_bounds(cell)
        return (lat0 + lat1) / 2, (lon0 + lon1) / 2

    def to_dict(self) -> dict:
        return {
            "lat_min": self.lat_min, "lon_min": self.lon_min, "phi": self.phi,
            "rows": self.rows, "cols": self.cols, "intervals": self.intervals,
            "tz_offset": self.tz_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


@dataclass(frozen=True, order=True)
class CellIndex:
    h: int  # row, 1..I
    w: int  # col, 1..J

    def __iter__(self):
        return iter((self.h, self.w))


@dataclass(frozen=True)
class SubSegment:
    a: GpsPoint
    b: GpsPoint
    cell: CellIndex
    speed: float
    bearing_dir: CompassDirection

    @property
    def length(self) -> float:
        return haversine_distance(self.a, self.b)


def _grid_index(x: float, origin: float, phi: float) -> int:
    q = (x - origin) / phi
    r = round(q)
    if abs(q - r) < _SNAP:
        q = r
    return math.floor(q) + 1


def cell_of(p: GpsPoint, g: GridSpec) -> CellIndex:
    h = _grid_index(p.lat, g.lat_min, g.phi)
    w = _grid_index(p.lon, g.lon_min, g.phi)
    if not (1 <= h <= g.rows and 1 <= w <= g.cols):
        raise OutOfBounds(f"point ({p.lat}, {p.lon}) outside grid")
    return CellIndex(h, w)


def in_cell(p: GpsPoint, cell: CellIndex, g: GridSpec, tol: float = BOUNDARY_TOL_DEG) -> bool:
    """Closed-box membership with a small tolerance, used for sub-segment checks."""
    lat0, lat1, lon0, lon1 = g.cell_bounds(cell)
    return lat0 - tol <= p.lat <= lat1 + tol and lon0 - tol <= p.lon <= lon1 + tol


def _haversine_a(lat1, lon1, lat2, lon2):
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    return math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2


def haversine_distance(p1: GpsPoint, p2: GpsPoint) -> float:
    """Great-circle distance in metres."""
    lat1, lon1, lat2, lon2 = map(math.radians, (p1.lat, p1.lon, p2.lat, p2.lon))
    a = min(1.0, _haversine_a(lat1, lon1, lat2, lon2))
    return 2 * EARTH_RADIUS * math.atan2(math.sqrt(a), math.sqrt(1 - a))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised :func:`haversine_distance` over degree arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    a = np.minimum(a, 1.0)
    return 2 * EARTH_RADIUS * np.arctan2(np.sqrt(a), np.sqrt(1 - a))


def midpoint(p1: GpsPoint, p2: GpsPoint) -> GpsPoint:
    if p1.lat == p2.lat and p1.lon == p2.lon:
        return GpsPoint(p1.lat, p1.lon, (p1.t + p2.t) / 2)
    lat1, lon1, lat2, lon2 = map(math.radians, (p1.lat, p1.lon, p2.lat, p2.lon))
    dlon = lon2 - lon1
    bx = math.cos(lat2) * math.cos(dlon)
    by = math.cos(lat2) * math.sin(dlon)
    if math.hypot(math.cos(lat1) + bx, by) < 1e-12:
        raise DegenerateSegment("midpoint undefined for antipodal points")
    lat_m = math.atan2(math.sin(lat1) + math.sin(lat2), math.hypot(math.cos(lat1) + bx, by))
    lon_m = lon1 + math.atan2(by, math.cos(lat1) + bx)
    lon_deg = (math.degrees(lon_m) + 540.0) % 360.0 - 180.0
    return GpsPoint(math.degrees(lat_m), lon_deg, (p1.t + p2.t) / 2)


def bearing(p1: GpsPoint, p2: GpsPoint) -> float:
    """Initial great-circle bearing in degrees, normalised to [0, 360)."""
    if p1.lat == p2.lat and p1.lon == p2.lon:
        raise DegenerateSegment("bearing undefined for coincident points")
    lat1, lon1, lat2, lon2 = map(math.radians, (p1.lat, p1.lon, p2.lat, p2.lon))
    dlon = lon2 - lon1
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if deg >= 360.0 else deg


def direction_of(bearing_deg: float) -> CompassDirection:
    """Bucket a bearing into one of eight 45-degree sectors centred on the compass points."""
    return CompassDirection(int(((bearing_deg + 22.5) % 360.0) // 45.0) % 8)


def subdivide_segment(p1: GpsPoint, p2: GpsPoint, g: GridSpec) -> list[SubSegment]:
    """Split p1->p2 by repeated midpoint bisection until each piece sits in one cell.

    Every piece inherits the parent segment's speed and compass direction.
    """
    if p2.t <= p1.t:
        raise NonPositiveDuration(f"t2={p2.t} <= t1={p1.t}")
    c1 = cell_of(p1, g)
    cell_of(p2, g)
    speed = haversine_distance(p1, p2) / (p2.t - p1.t)
    direction = direction_of(bearing(p1, p2))

    out: list[SubSegment] = []

    def split(a: GpsPoint, b: GpsPoint, ca: CellIndex, depth: int) -> None:
        cb = cell_of(b, g)
        if ca == cb:
            out.append(SubSegment(a, b, ca, speed, direction))
            return
        m = midpoint(a, b)
        cm = cell_of(m, g)
        if depth >= MAX_SUBDIVISION_DEPTH or (in_cell(a, cm, g) and in_cell(b, cm, g)):
            out.append(SubSegment(a, b, cm, speed, direction))
            return
        split(a, m, ca, depth + 1)
        split(m, b, cm, depth + 1)

    split(p1, p2, c1, 0)
    return out


def time_interval_of(t: float, g: GridSpec, tz_offset: int | None = None) -> int:
    """Index of the local time-of-day interval containing epoch second ``t``."""
    if SECONDS_PER_DAY % g.intervals:
        raise BadConfig(f"T={g.intervals} does not divide 86400")
    off = g.tz_offset if tz_offset is None else tz_offset
    return int(((t + off) % SECONDS_PER_DAY) // g.interval_seconds)


def absolute_interval(t: float, g: GridSpec) -> int:
    """Calendar-true interval counter (local days since epoch * T + interval)."""
    return int((t + g.tz_offset) // g.interval_seconds)
