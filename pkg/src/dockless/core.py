"""Shared domain types, geodesic math and calendar conventions.

Time is kept as integer UTC seconds since the epoch. Hour binning always
goes through a fixed local-time offset (Singapore, +8h, by default) so that
demand patterns line up with local clock hours.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_UTC_OFFSET_H = 8.0
HOURS_PER_WEEK = 168
INTERVALS_PER_HOUR = 30  # 2-minute polling intervals


class DayCategory(enum.IntEnum):
    MON_THU = 0
    FRI = 1
    SAT_SUN = 2


def category_of_weekday(weekday: int) -> DayCategory:
    """Map a Python weekday (Monday=0) to its ridership category."""
    if weekday <= 3:
        return DayCategory.MON_THU
    if weekday == 4:
        return DayCategory.FRI
    return DayCategory.SAT_SUN


def day_category(index: int) -> DayCategory:
    """Day category of the hourly timestep ``index`` (index 0 is Monday 00:00)."""
    if index < 0:
        raise ValueError(f"timestep index must be >= 0, got {index}")
    return category_of_weekday((index // 24) % 7)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Ping:
    bike_id: str
    t: int
    pos: GeoPoint

    def __post_init__(self):
        if not self.bike_id:
            raise ValueError("bike_id must be non-empty")


@dataclass(frozen=True)
class Trip:
    bike_id: str
    t_start: int
    t_end: int
    origin: GeoPoint
    dest: GeoPoint
    origin_station: Optional[int] = None
    dest_station: Optional[int] = None

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    def with_stations(self, origin_station: int, dest_station: int) -> "Trip":
        return Trip(self.bike_id, self.t_start, self.t_end, self.origin, self.dest,
                    origin_station, dest_station)


@dataclass(frozen=True)
class TimeStep:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"timestep index must be >= 0, got {self.index}")

    @property
    def hour_of_day(self) -> int:
        return self.index % 24

    @property
    def day_category(self) -> DayCategory:
        return day_category(self.index)


def geodesic(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters (haversine, spherical Earth)."""
    return haversine_m(a.lat, a.lon, b.lat, b.lon)


def haversine_m(lat1, lon1, lat2, lon2):
    """Haversine distance in meters. Works on floats or numpy arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    if np.ndim(d) == 0:
        return float(d)
    return d


def destination_point(origin: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached from ``origin`` along a great circle (inverse of geodesic)."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    p1 = math.radians(origin.lat)
    l1 = math.radians(origin.lon)
    p2 = math.asin(math.sin(p1) * math.cos(delta)
                   + math.cos(p1) * math.sin(delta) * math.cos(theta))
    l2 = l1 + math.atan2(math.sin(theta) * math.sin(delta) * math.cos(p1),
                         math.cos(delta) - math.sin(p1) * math.sin(p2))
    lon = (math.degrees(l2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(p2), lon)


class LocalProjection:
    """Equirectangular projection to meters east/north of a reference point.

    Adequate at city scale (tens of km); used wherever planar Euclidean
    distance is wanted, e.g. k-means.
    """

    def __init__(self, ref_lat: float, ref_lon: float):
        self.ref_lat = float(ref_lat)
        self.ref_lon = float(ref_lon)
        self._kx = EARTH_RADIUS_M * math.cos(math.radians(self.ref_lat)) * math.pi / 180.0
        self._ky = EARTH_RADIUS_M * math.pi / 180.0

    @classmethod
    def centered_on(cls, lats, lons) -> "LocalProjection":
        return cls(float(np.mean(lats)), float(np.mean(lons)))

    def forward(self, lats, lons) -> np.ndarray:
        x = (np.asarray(lons, dtype=float) - self.ref_lon) * self._kx
        y = (np.asarray(lats, dtype=float) - self.ref_lat) * self._ky
        return np.column_stack([x, y])

    def inverse(self, xy) -> tuple[np.ndarray, np.ndarray]:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        lons = xy[:, 0] / self._kx + self.ref_lon
        lats = xy[:, 1] / self._ky + self.ref_lat
        return lats, lons

    def to_dict(self) -> dict:
        return {"ref_lat": self.ref_lat, "ref_lon": self.ref_lon}


# --- time helpers -----------------------------------------------------------

def parse_timestamp(text: str) -> int:
    """ISO-8601 -> UTC epoch seconds. Naive timestamps are taken as UTC."""
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(math.floor(dt.timestamp()))


def format_timestamp(t: int) -> str:
    return datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def local_hour_and_category(t: int, utc_offset_h: float = DEFAULT_UTC_OFFSET_H):
    """Local hour of day and day category of UTC epoch second ``t``."""
    local = datetime.fromtimestamp(int(t), tz=timezone.utc) + timedelta(hours=utc_offset_h)
    return local.hour, category_of_weekday(local.weekday())


def local_midnight_utc(year: int, month: int, day: int,
                       utc_offset_h: float = DEFAULT_UTC_OFFSET_H) -> int:
    """UTC epoch seconds of local midnight on the given calendar date."""
    dt = datetime(year, month, day, tzinfo=timezone.utc) - timedelta(hours=utc_offset_h)
    return int(dt.timestamp())


def count_category_hours(start: int, end: int,
                         utc_offset_h: float = DEFAULT_UTC_OFFSET_H) -> np.ndarray:
    """Exposure table: how many whole local clock hours of each
    (day category, hour of day) cell fall inside ``[start, end)``.

    Returns an int array of shape (3, 24).
    """
    counts = np.zeros((3, 24), dtype=np.int64)
    off = int(round(utc_offset_h * 3600))
    first = -((-(start + off)) // 3600) * 3600 - off  # first local hour boundary >= start
    for t in range(first, end - 3599, 3600):
        hour, cat = local_hour_and_category(t, utc_offset_h)
        counts[cat, hour] += 1
    return counts
