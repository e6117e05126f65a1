"""Raw GPS ping ingestion, trip extraction and fleet usage analysis."""

from __future__ import annotations

import csv
import io
import logging
import sys
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from dockless.core import (
    GeoPoint,
    Ping,
    Trip,
    format_timestamp,
    haversine_m,
    parse_timestamp,
)

log = logging.getLogger(__name__)

MIN_TRIP_SECONDS = 180
MIN_TRIP_METERS = 200.0
MAX_TRIP_KMH = 25.0
IDLE_DAYS = 7
# Boundary values are accepted ("at least", and speed inclusive at 25 km/h);
# the slack absorbs float noise from the haversine at exact thresholds.
_EPS_M = 1e-6
_EPS_KMH = 1e-9

TRIP_COLUMNS = ["bike_id", "t_start", "t_end", "origin_lat", "origin_lon",
                "dest_lat", "dest_lon"]


class IngestError(ValueError):
    """Raised in strict mode on the first malformed input row."""


@dataclass
class ParseReport:
    rows_read: int = 0
    errors: list = field(default_factory=list)  # (line_no, message)
    duplicates: int = 0

    @property
    def error_count(self) -> int:
        return len(self.errors)

    def add(self, line_no: int, message: str):
        self.errors.append((line_no, message))

    def write(self, stream: IO[str] = None):
        stream = stream or sys.stderr
        for line_no, message in self.errors:
            stream.write(f"line {line_no}: {message}\n")
        if self.duplicates:
            stream.write(f"dropped {self.duplicates} duplicate-timestamp ping(s)\n")


@dataclass
class BikeHistory:
    bike_id: str
    pings: list  # time-ordered, unique timestamps


@dataclass
class UsageStats:
    trips_per_bike: dict
    idle_bikes: list  # (bike_id, (start, end)) with end - start >= IDLE_DAYS days

    def histogram(self) -> dict:
        """Number of bikes per trip count (the usage-frequency distribution)."""
        return dict(sorted(Counter(self.trips_per_bike.values()).items()))

    @property
    def idle_bike_ids(self) -> set:
        return {b for b, _ in self.idle_bikes}


def _looks_like_header(row) -> bool:
    if len(row) < 4:
        return False
    try:
        float(row[2])
        float(row[3])
    except ValueError:
        return True
    return False


def parse_pings(stream, strict: bool = False, report: Optional[ParseReport] = None):
    """Parse the ping CSV (bike_id, timestamp, lat, lon; header optional).

    ``stream`` may be a text stream, a binary stream or a bytes object.
    Malformed rows are recorded in ``report`` and skipped, unless ``strict``
    is set, in which case :class:`IngestError` is raised.

    Returns ``(pings, report)``.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, io.BufferedIOBase) or (hasattr(stream, "mode") and "b" in getattr(stream, "mode", "")):
        stream = io.TextIOWrapper(stream, encoding="utf-8")
    report = report if report is not None else ParseReport()
    pings = []
    for line_no, row in enumerate(csv.reader(stream), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if line_no == 1 and _looks_like_header(row):
            continue
        report.rows_read += 1
        try:
            if len(row) != 4:
                raise ValueError(f"expected 4 fields, got {len(row)}")
            bike_id = row[0].strip()
            if not bike_id:
                raise ValueError("empty bike_id")
            t = parse_timestamp(row[1])
            pos = GeoPoint(float(row[2]), float(row[3]))
        except ValueError as exc:
            if strict:
                raise IngestError(f"line {line_no}: {exc}") from exc
            report.add(line_no, str(exc))
            continue
        pings.append(Ping(bike_id, t, pos))
    return pings, report


def write_pings(pings: Iterable[Ping], stream: IO[str], header: bool = True):
    w = csv.writer(stream, lineterminator="\n")
    if header:
        w.writerow(["bike_id", "timestamp", "lat", "lon"])
    for p in pings:
        w.writerow([p.bike_id, format_timestamp(p.t), f"{p.pos.lat:.7f}", f"{p.pos.lon:.7f}"])


def build_histories(pings: Iterable[Ping], report: Optional[ParseReport] = None) -> dict:
    """Group pings per bike, sort by time and drop repeated timestamps.

    For a repeated (bike, timestamp) the first row in input order is kept.
    """
    by_bike = defaultdict(list)
    for order, p in enumerate(pings):
        by_bike[p.bike_id].append((p.t, order, p))
    histories = {}
    for bike_id in sorted(by_bike):
        rows = sorted(by_bike[bike_id], key=lambda r: (r[0], r[1]))
        kept = []
        for t, _, p in rows:
            if kept and kept[-1].t == t:
                if report is not None:
                    report.duplicates += 1
                continue
            kept.append(p)
        histories[bike_id] = BikeHistory(bike_id, kept)
    return histories


def is_trip(p: Ping, q: Ping) -> bool:
    """Whether the consecutive ping pair (p, q) passes all three trip filters."""
    dt = q.t - p.t
    if dt < MIN_TRIP_SECONDS:
        return False
    dist = haversine_m(p.pos.lat, p.pos.lon, q.pos.lat, q.pos.lon)
    if dist < MIN_TRIP_METERS - _EPS_M:
        return False
    return dist / dt * 3.6 <= MAX_TRIP_KMH + _EPS_KMH


def extract_trips(history: BikeHistory) -> list:
    """Trips from strictly consecutive ping pairs of one bike."""
    pings = history.pings
    if len(pings) < 2:
        return []
    t = np.fromiter((p.t for p in pings), dtype=np.int64, count=len(pings))
    lat = np.fromiter((p.pos.lat for p in pings), dtype=float, count=len(pings))
    lon = np.fromiter((p.pos.lon for p in pings), dtype=float, count=len(pings))
    dt = np.diff(t)
    dist = np.atleast_1d(haversine_m(lat[:-1], lon[:-1], lat[1:], lon[1:]))
    with np.errstate(divide="ignore", invalid="ignore"):
        speed = np.where(dt > 0, dist / np.maximum(dt, 1) * 3.6, np.inf)
    ok = ((dt >= MIN_TRIP_SECONDS)
          & (dist >= MIN_TRIP_METERS - _EPS_M)
          & (speed <= MAX_TRIP_KMH + _EPS_KMH))
    return [Trip(history.bike_id, pings[i].t, pings[i + 1].t, pings[i].pos, pings[i + 1].pos)
            for i in np.flatnonzero(ok)]


def extract_all(histories: dict) -> list:
    """Trips of every bike, ordered by (t_start, bike_id)."""
    trips = []
    for h in histories.values():
        trips.extend(extract_trips(h))
    trips.sort(key=lambda tr: (tr.t_start, tr.bike_id))
    return trips


def idle_intervals(trips: list, window: tuple, min_days: float = IDLE_DAYS) -> list:
    """Maximal trip-free intervals of one bike that last at least ``min_days``.

    A bike is busy from a trip's start to its end and idle otherwise; the
    observation window clips the first and last interval.
    """
    w0, w1 = window
    cursor = w0
    gaps = []
    for tr in sorted(trips, key=lambda x: x.t_start):
        if tr.t_start > cursor:
            gaps.append((cursor, min(tr.t_start, w1)))
        cursor = max(cursor, tr.t_end)
    if cursor < w1:
        gaps.append((cursor, w1))
    return [(a, b) for a, b in gaps if b - a >= min_days * 86400]


def usage_stats(histories: dict, window: Optional[tuple] = None,
                min_idle_days: float = IDLE_DAYS) -> UsageStats:
    """Trip counts per bike and idle stretches of ``min_idle_days`` or more.

    ``window`` defaults to the span of all pings.
    """
    if window is None:
        ts = [p.t for h in histories.values() for p in h.pings]
        window = (min(ts), max(ts)) if ts else (0, 0)
    per_bike = {}
    idle = []
    for bike_id, h in histories.items():
        trips = extract_trips(h)
        per_bike[bike_id] = len(trips)
        idle.extend((bike_id, iv) for iv in idle_intervals(trips, window, min_idle_days))
    return UsageStats(per_bike, idle)


def write_trips(trips: Iterable[Trip], stream: IO[str], with_stations: bool = False):
    w = csv.writer(stream, lineterminator="\n")
    cols = TRIP_COLUMNS + (["origin_station", "dest_station"] if with_stations else [])
    w.writerow(cols)
    for tr in trips:
        row = [tr.bike_id, format_timestamp(tr.t_start), format_timestamp(tr.t_end),
               f"{tr.origin.lat:.7f}", f"{tr.origin.lon:.7f}",
               f"{tr.dest.lat:.7f}", f"{tr.dest.lon:.7f}"]
        if with_stations:
            row += ["" if tr.origin_station is None else tr.origin_station,
                    "" if tr.dest_station is None else tr.dest_station]
        w.writerow(row)


def read_trips(stream: IO[str]) -> list:
    """Read a trips CSV, with or without the station columns."""
    trips = []
    for row in csv.DictReader(stream):
        o = row.get("origin_station")
        d = row.get("dest_station")
        trips.append(Trip(
            row["bike_id"],
            parse_timestamp(row["t_start"]),
            parse_timestamp(row["t_end"]),
            GeoPoint(float(row["origin_lat"]), float(row["origin_lon"])),
            GeoPoint(float(row["dest_lat"]), float(row["dest_lon"])),
            int(o) if o not in (None, "") else None,
            int(d) if d not in (None, "") else None,
        ))
    return trips
