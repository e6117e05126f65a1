"""Synthetic ping datasets driven by a known (ground-truth) demand process.

Bikes live at stations. Every 2-minute interval each station draws a
Poisson number of departures; a departure takes the longest-parked bike (if
any is there), rides to a destination drawn from the station's hourly
destination distribution at 12 km/h nominal, and leaves an origin ping and a
destination ping behind. Unserved departures vanish.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dockless.core import (
    DEFAULT_UTC_OFFSET_H,
    INTERVALS_PER_HOUR,
    GeoPoint,
    LocalProjection,
    Ping,
    category_of_weekday,
    destination_point,
    geodesic,
    local_midnight_utc,
)
from dockless.ingest import MIN_TRIP_METERS, MIN_TRIP_SECONDS

NOMINAL_KMH = 12.0
GROUND_TRUTH_VERSION = 1
# Monday 4 September 2017, local midnight in Singapore.
DEFAULT_GENESIS = local_midnight_utc(2017, 9, 4, DEFAULT_UTC_OFFSET_H)
WOODLANDS = (1.436, 103.786)


@dataclass
class GroundTruth:
    """Known demand process.

    ``rates`` has shape (S, 3, 24): Poisson mean per 2-minute interval by
    station, day category and local hour. ``dest_probs`` has shape (S, 24, S).
    """

    centroids: list  # GeoPoint per station
    scatter_radius_m: np.ndarray
    rates: np.ndarray
    dest_probs: np.ndarray
    fleet: np.ndarray

    def __post_init__(self):
        self.scatter_radius_m = np.broadcast_to(
            np.asarray(self.scatter_radius_m, dtype=float), (len(self.centroids),)).copy()
        self.rates = np.asarray(self.rates, dtype=float)
        self.dest_probs = np.asarray(self.dest_probs, dtype=float)
        self.fleet = np.asarray(self.fleet, dtype=np.int64)
        S = len(self.centroids)
        if self.rates.shape != (S, 3, 24):
            raise ValueError(f"rates must have shape ({S}, 3, 24), got {self.rates.shape}")
        if self.dest_probs.shape != (S, 24, S):
            raise ValueError(f"dest_probs must have shape ({S}, 24, {S})")
        if self.fleet.shape != (S,):
            raise ValueError("fleet must have one count per station")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rates must be finite and non-negative")
        if np.any(self.fleet < 0):
            raise ValueError("fleet counts must be non-negative")
        if np.any(self.dest_probs < 0) or np.any(np.abs(self.dest_probs.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("each destination distribution must be non-negative and sum to 1")

    @property
    def n_stations(self) -> int:
        return len(self.centroids)

    def to_json(self) -> dict:
        return {
            "version": GROUND_TRUTH_VERSION,
            "stations": [
                {"id": i, "lat": c.lat, "lon": c.lon,
                 "scatter_radius_m": float(self.scatter_radius_m[i]),
                 "fleet": int(self.fleet[i])}
                for i, c in enumerate(self.centroids)
            ],
            "rates": self.rates.tolist(),
            "dest_probs": self.dest_probs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GroundTruth":
        st = sorted(doc["stations"], key=lambda s: s["id"])
        return cls(
            centroids=[GeoPoint(s["lat"], s["lon"]) for s in st],
            scatter_radius_m=np.array([s["scatter_radius_m"] for s in st]),
            rates=np.array(doc["rates"]),
            dest_probs=np.array(doc["dest_probs"]),
            fleet=np.array([s["fleet"] for s in st]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def grid_layout(n: int, spacing_m: float = 1500.0, center=WOODLANDS) -> list:
    """``n`` station centroids on a square grid around ``center``."""
    side = math.ceil(math.sqrt(n))
    proj = LocalProjection(*center)
    offs = (np.arange(side) - (side - 1) / 2.0) * spacing_m
    xy = np.array([(x, y) for y in offs for x in offs])[:n]
    lats, lons = proj.inverse(xy)
    return [GeoPoint(float(a), float(b)) for a, b in zip(lats, lons)]


def imbalanced_system(n_stations: int = 20, bikes_per_station: int = 15,
                      base_rate: float = 0.05, imbalance: float = 0.6,
                      seed: int = 0, scatter_radius_m: float = 300.0) -> GroundTruth:
    """A synthetic city with structurally imbalanced demand.

    Half the stations are "residential" (heavy morning outflow, evening
    inflow) and half "central" (the reverse). ``imbalance`` in [0, 1] is the
    share of peak-hour trips that go to the opposite kind of station.
    Rates peak at 8h and 18h and scale down at weekends.
    """
    rng = np.random.default_rng(seed)
    S = n_stations
    hours = np.arange(24)
    profile = (0.2 + 1.6 * np.exp(-0.5 * ((hours - 8) / 1.5) ** 2)
               + 1.6 * np.exp(-0.5 * ((hours - 18) / 1.5) ** 2))
    profile[:6] *= 0.3
    kind = np.arange(S) % 2  # 0 residential, 1 central
    scale = rng.uniform(0.6, 1.4, size=S)
    rates = np.zeros((S, 3, 24))
    dest = np.zeros((S, 24, S))
    cat_scale = np.array([1.0, 1.1, 0.7])
    for s in range(S):
        morning = 1.8 if kind[s] == 0 else 0.5
        evening = 0.5 if kind[s] == 0 else 1.8
        tilt = np.where(hours < 13, morning, evening)
        for c in range(3):
            rates[s, c] = base_rate * scale[s] * cat_scale[c] * profile * tilt
        for h in range(24):
            peak = 6 <= h <= 10 or 16 <= h <= 20
            w = np.ones(S)
            if peak:
                other = kind != kind[s]
                w = np.where(other, imbalance * S / max(other.sum(), 1),
                             (1 - imbalance) * S / max((~other).sum(), 1))
            w = w * rng.uniform(0.5, 1.5, size=S)
            dest[s, h] = w / w.sum()
    fleet = np.full(S, bikes_per_station, dtype=np.int64)
    return GroundTruth(grid_layout(S), np.full(S, scatter_radius_m), rates, dest, fleet)


def _jitter(center: GeoPoint, radius_m: float, rng) -> GeoPoint:
    r = radius_m * math.sqrt(rng.random())
    return destination_point(center, rng.random() * 360.0, r)


def _dest_position(origin: GeoPoint, center: GeoPoint, radius_m: float, rng) -> GeoPoint:
    """Uniform point in the destination disk at least MIN_TRIP_METERS from origin."""
    for _ in range(64):
        p = _jitter(center, radius_m, rng)
        if geodesic(origin, p) >= MIN_TRIP_METERS + 1.0:
            return p
    # fall back to the far side of the disk
    d = geodesic(origin, center)
    if d < 1e-6:
        return destination_point(center, rng.random() * 360.0, radius_m)
    bearing = _bearing(origin, center)
    return destination_point(center, bearing, radius_m)


def _bearing(a: GeoPoint, b: GeoPoint) -> float:
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    y = math.sin(dl) * math.cos(p2)
    x = math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl)
    return math.degrees(math.atan2(y, x))


def trip_duration(distance_m: float) -> int:
    return max(MIN_TRIP_SECONDS, math.ceil(distance_m * 3.6 / NOMINAL_KMH))


def generate(gt: GroundTruth, days: int, seed: int, *,
             genesis: int = DEFAULT_GENESIS,
             utc_offset_h: float = DEFAULT_UTC_OFFSET_H,
             noise_fraction: float = 0.0,
             relocation_fraction: float = 0.0,
             return_trips: bool = False):
    """Simulate ``days`` days of riding and return the ping stream.

    ``genesis`` must be a local Monday midnight. ``noise_fraction`` and
    ``relocation_fraction`` are per-parking-gap probabilities of injecting a
    short GPS jitter ping or a fast operator relocation pair; neither may
    form a trip. With ``return_trips`` the generated trips (bike, t_start,
    t_end, origin station, dest station, origin, dest) are returned as well.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    S = gt.n_stations
    if S < 2:
        raise ValueError("at least 2 stations are required")
    if np.any(gt.scatter_radius_m < MIN_TRIP_METERS):
        raise ValueError(f"scatter radius must be >= {MIN_TRIP_METERS} m so every trip "
                         "can clear the distance filter")
    rng = np.random.default_rng(seed)
    cum_dest = np.cumsum(gt.dest_probs, axis=2)

    pings: list = []
    parked = [deque() for _ in range(S)]
    position = {}
    n_bikes = int(gt.fleet.sum())
    width = max(5, len(str(n_bikes)))
    bike = 0
    for s in range(S):
        for _ in range(int(gt.fleet[s])):
            bid = f"bike{bike:0{width}d}"
            bike += 1
            pos = _jitter(gt.centroids[s], gt.scatter_radius_m[s], rng)
            position[bid] = pos
            parked[s].append(bid)
            pings.append(Ping(bid, genesis, pos))

    arrivals: list = []  # (t_arrive, seq, bike, station)
    seq = 0
    trips = []
    for day in range(days):
        cat = category_of_weekday(day % 7)
        for hour in range(24):
            lam = gt.rates[:, cat, hour]
            if not lam.any():
                continue
            h0 = genesis + (day * 24 + hour) * 3600
            counts = rng.poisson(np.repeat(lam[:, None], INTERVALS_PER_HOUR, axis=1))
            deps = []
            for s, j in zip(*np.nonzero(counts)):
                t0 = h0 + int(j) * 120
                for t in rng.integers(t0, t0 + 120, size=counts[s, j]):
                    deps.append((int(t), int(s)))
            deps.sort()
            for t, s in deps:
                while arrivals and arrivals[0][0] <= t:
                    _, _, b, q = heapq.heappop(arrivals)
                    parked[q].append(b)
                if not parked[s]:
                    continue
                b = parked[s].popleft()
                q = int(np.searchsorted(cum_dest[s, hour], rng.random() * cum_dest[s, hour, -1],
                                        side="right"))
                q = min(q, S - 1)
                origin = position[b]
                dest = _dest_position(origin, gt.centroids[q], gt.scatter_radius_m[q], rng)
                t_end = t + trip_duration(geodesic(origin, dest))
                pings.append(Ping(b, t, origin))
                pings.append(Ping(b, t_end, dest))
                position[b] = dest
                seq += 1
                heapq.heappush(arrivals, (t_end, seq, b, q))
                if return_trips:
                    trips.append((b, t, t_end, s, q, origin, dest))

    if noise_fraction > 0 or relocation_fraction > 0:
        pings = _inject_noise(pings, noise_fraction, relocation_fraction, rng)
    pings.sort(key=lambda p: (p.t, p.bike_id))
    if return_trips:
        return pings, trips
    return pings


def _inject_noise(pings, noise_fraction, relocation_fraction, rng):
    """Add jitter pings and relocation triples inside parking gaps.

    Jitter goes in the first half of a gap, relocations in the second half,
    so the two never interleave.
    """
    by_bike: dict = {}
    for p in pings:
        by_bike.setdefault(p.bike_id, []).append(p)
    out = []
    for bid in sorted(by_bike):
        seq = sorted(by_bike[bid], key=lambda p: p.t)
        out.extend(seq)
        # parking gaps: from each arrival (or the initial ping) to the next departure
        gaps = [(seq[i], seq[i + 1].t) for i in range(len(seq) - 1)
                if seq[i].pos == seq[i + 1].pos] + [(seq[-1], seq[-1].t + 86400)]
        for a, t_next in gaps:
            t_lo, t_hi = a.t + 1, t_next - 1
            mid = (t_lo + t_hi) // 2
            if mid - t_lo >= 1 and rng.random() < noise_fraction:
                moved = destination_point(a.pos, rng.random() * 360.0, rng.uniform(5.0, 150.0))
                out.append(Ping(bid, int(rng.integers(t_lo, mid)), moved))
            if t_hi - mid >= 130 and rng.random() < relocation_fraction:
                t = int(rng.integers(mid, t_hi - 121))
                far = destination_point(a.pos, rng.random() * 360.0, 2000.0)
                out.append(Ping(bid, t, a.pos))
                out.append(Ping(bid, t + 60, far))  # 2 km in 60 s
                out.append(Ping(bid, t + 120, a.pos))
    return out
