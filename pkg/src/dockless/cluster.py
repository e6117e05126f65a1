"""Abstract stations from trip endpoints via two-stage k-means.

Stage one splits the city into regions; stage two clusters one region's
trip endpoints into stations. Clustering runs in a local planar projection
(meters), radii are measured with the haversine from each centroid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dockless.core import GeoPoint, LocalProjection, Trip, haversine_m

STATIONSET_VERSION = 1


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (k, 2)
    labels: np.ndarray  # (n,)
    inertia: float
    inertia_history: list
    n_iter: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _assign(points, centroids, chunk=4096):
    labels = np.empty(len(points), dtype=np.int64)
    best = np.empty(len(points))
    for i in range(0, len(points), chunk):
        d2 = _sq_dists(points[i:i + chunk], centroids)
        labels[i:i + chunk] = np.argmin(d2, axis=1)  # first minimum -> lowest id on ties
        best[i:i + chunk] = d2[np.arange(len(d2)), labels[i:i + chunk]]
    return labels, best


def kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(points)
    idx = [int(rng.integers(n))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centres
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rest[rng.integers(len(rest))]) if len(rest) else int(rng.integers(n))
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].astype(float).copy()


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-3) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops once no centroid moves by ``tol`` (same unit as the points) or
    after ``max_iter`` rounds. A cluster that loses all its points is
    re-seeded at the point farthest from its own centroid.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(points):
        raise ValueError(f"k={k} exceeds the number of points ({len(points)})")
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(points, k, rng)
    labels, best = _assign(points, centroids)
    history = [float(best.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = centroids.copy()
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        taken = set()
        for j in np.flatnonzero(~filled):
            order = np.argsort(-best, kind="stable")
            pick = next(int(i) for i in order if int(i) not in taken)
            taken.add(pick)
            new[j] = points[pick]
            best[pick] = 0.0
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, best = _assign(points, centroids)
        history.append(float(best.sum()))
        if shift < tol:
            break
    return KMeansResult(centroids, labels, history[-1], history, n_iter)


def _endpoints(trips) -> tuple[np.ndarray, np.ndarray]:
    """Latitudes and longitudes of all endpoints as (o0, d0, o1, d1, ...)."""
    lat = np.empty(2 * len(trips))
    lon = np.empty(2 * len(trips))
    for i, tr in enumerate(trips):
        lat[2 * i], lon[2 * i] = tr.origin.lat, tr.origin.lon
        lat[2 * i + 1], lon[2 * i + 1] = tr.dest.lat, tr.dest.lon
    return lat, lon


@dataclass
class Regions:
    origin_region: np.ndarray
    dest_region: np.ndarray
    centroids: list  # GeoPoint per region
    projection: LocalProjection

    def trips_in(self, trips, region: int) -> list:
        """Trips whose two endpoints both fall in ``region``."""
        keep = (self.origin_region == region) & (self.dest_region == region)
        return [tr for tr, k in zip(trips, keep) if k]

    def largest(self) -> int:
        counts = np.bincount(np.concatenate([self.origin_region, self.dest_region]),
                             minlength=len(self.centroids))
        return int(np.argmax(counts))


def segment_regions(trips, k_regions: int = 8, seed: int = 0) -> Regions:
    if not trips:
        raise ValueError("no trips to segment")
    lat, lon = _endpoints(trips)
    proj = LocalProjection.centered_on(lat, lon)
    res = kmeans(proj.forward(lat, lon), k_regions, seed=seed)
    clat, clon = proj.inverse(res.centroids)
    return Regions(res.labels[0::2].copy(), res.labels[1::2].copy(),
                   [GeoPoint(float(a), float(b)) for a, b in zip(clat, clon)], proj)


@dataclass(frozen=True)
class Station:
    id: int
    centroid: GeoPoint
    radius: float
    area: float
    member_count: int


@dataclass
class StationSet:
    stations: list
    projection: LocalProjection
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    initial_inventory: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.stations)

    def centroid_xy(self) -> np.ndarray:
        lats = [s.centroid.lat for s in self.stations]
        lons = [s.centroid.lon for s in self.stations]
        return self.projection.forward(lats, lons)

    def nearest(self, lats, lons) -> np.ndarray:
        """Nearest station id for each coordinate (ties -> lowest id)."""
        labels, _ = _assign(self.projection.forward(lats, lons), self.centroid_xy())
        return labels

    def inventory_vector(self) -> np.ndarray:
        v = np.zeros(len(self.stations), dtype=np.int64)
        for sid, n in self.initial_inventory.items():
            v[int(sid)] = n
        return v

    def to_json(self) -> dict:
        inv = self.inventory_vector()
        return {
            "version": STATIONSET_VERSION,
            "metadata": {**self.meta, "projection": self.projection.to_dict()},
            "stations": [
                {"id": s.id, "lat": s.centroid.lat, "lon": s.centroid.lon,
                 "radius_m": s.radius, "area_m2": s.area,
                 "member_count": s.member_count, "initial_bikes": int(inv[s.id])}
                for s in self.stations
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "StationSet":
        meta = dict(doc.get("metadata", {}))
        proj = meta.pop("projection", None)
        st = sorted(doc["stations"], key=lambda s: s["id"])
        stations = [Station(s["id"], GeoPoint(s["lat"], s["lon"]), s["radius_m"], s["area_m2"],
                            s.get("member_count", 0)) for s in st]
        if proj is None:
            projection = LocalProjection.centered_on([s.centroid.lat for s in stations],
                                                     [s.centroid.lon for s in stations])
        else:
            projection = LocalProjection(proj["ref_lat"], proj["ref_lon"])
        inv = {s["id"]: int(s.get("initial_bikes", 0)) for s in st}
        return cls(stations, projection, initial_inventory=inv, meta=meta)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "StationSet":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_stations(region_trips, k_stations: int = 120, seed: int = 0,
                   region: Optional[int] = None) -> tuple[StationSet, list]:
    """Cluster one region's endpoints into ``k_stations`` abstract stations.

    Returns the station set and the trips annotated with origin and
    destination station ids.
    """
    if not region_trips:
        raise ValueError("no trips in region")
    lat, lon = _endpoints(region_trips)
    proj = LocalProjection.centered_on(lat, lon)
    res = kmeans(proj.forward(lat, lon), k_stations, seed=seed)
    clat, clon = proj.inverse(res.centroids)
    dist = haversine_m(clat[res.labels], clon[res.labels], lat, lon)
    stations = []
    for j in range(k_stations):
        members = res.labels == j
        radius = float(dist[members].max()) if members.any() else 0.0
        stations.append(Station(j, GeoPoint(float(clat[j]), float(clon[j])), radius,
                                math.pi * radius ** 2, int(members.sum())))
    annotated = [tr.with_stations(int(res.labels[2 * i]), int(res.labels[2 * i + 1]))
                 for i, tr in enumerate(region_trips)]
    meta = {"seed": seed, "k": k_stations, "region": region, "inertia": res.inertia}
    sset = StationSet(stations, proj, assignment=res.labels, meta=meta)
    return sset, annotated


def assign_stations(trips, stations: StationSet) -> list:
    """Annotate trips with their nearest station at each end."""
    if not trips:
        return []
    lat, lon = _endpoints(trips)
    labels = stations.nearest(lat, lon)
    return [tr.with_stations(int(labels[2 * i]), int(labels[2 * i + 1]))
            for i, tr in enumerate(trips)]


def assign_initial_inventory(first_pings: dict, stations: StationSet,
                             active_bikes: Optional[set] = None) -> dict:
    """Count each bike's first ping at its nearest station.

    ``first_pings`` maps bike id to its first Ping. If ``active_bikes`` is
    given, bikes outside it (e.g. bikes with no trips) are skipped.
    """
    if len(stations) == 0:
        raise ValueError("no stations")
    inv = {s.id: 0 for s in stations.stations}
    bikes = [b for b in sorted(first_pings) if active_bikes is None or b in active_bikes]
    if not bikes:
        return inv
    lats = [first_pings[b].pos.lat for b in bikes]
    lons = [first_pings[b].pos.lon for b in bikes]
    for sid in stations.nearest(lats, lons):
        inv[int(sid)] += 1
    return inv
