"""Poisson demand model: per-station hourly rates and destination tables.

Rates are kept per 2-minute interval. An hour of demand at a station is the
sum of 30 independent Poisson draws at that rate; each departure then gets a
destination from the station's hourly destination distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dockless.core import (
    DEFAULT_UTC_OFFSET_H,
    INTERVALS_PER_HOUR,
    count_category_hours,
    day_category,
    local_hour_and_category,
)

MODEL_VERSION = 1


@dataclass
class RateTable:
    """``rates[s, c, h]``: mean departures per 2-minute interval.

    ``trips[s, c, h]`` and ``intervals[c, h]`` are the observation counts the
    rates were computed from (rates == trips / intervals where intervals > 0).
    """

    rates: np.ndarray
    trips: Optional[np.ndarray] = None
    intervals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if self.rates.ndim != 3 or self.rates.shape[1:] != (3, 24):
            raise ValueError(f"rates must have shape (S, 3, 24), got {self.rates.shape}")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rates must be finite and non-negative")

    @property
    def n_stations(self) -> int:
        return self.rates.shape[0]


@dataclass
class DestTable:
    """``probs[s, h, :]``: destination distribution of trips leaving s at hour h."""

    probs: np.ndarray
    observed: Optional[np.ndarray] = None  # trips per (s, h)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        S = self.probs.shape[0]
        if self.probs.shape != (S, 24, S):
            raise ValueError(f"probs must have shape (S, 24, S), got {self.probs.shape}")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("each destination distribution must be non-negative and sum to 1")


@dataclass
class DemandModel:
    rates: RateTable
    dests: DestTable
    utc_offset_h: float = DEFAULT_UTC_OFFSET_H

    @property
    def n_stations(self) -> int:
        return self.rates.n_stations

    def to_json(self) -> dict:
        doc = {
            "version": MODEL_VERSION,
            "station_count": self.n_stations,
            "utc_offset_h": self.utc_offset_h,
            "interval_minutes": 2,
            "rates": self.rates.rates.tolist(),
            "dest_probs": self.dests.probs.tolist(),
        }
        if self.rates.trips is not None:
            doc["observed_trips"] = self.rates.trips.tolist()
        if self.rates.intervals is not None:
            doc["observed_intervals"] = self.rates.intervals.tolist()
        if self.dests.observed is not None:
            doc["observed_dest_trips"] = self.dests.observed.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "DemandModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported demand model version {doc.get('version')!r}")
        rates = np.array(doc["rates"], dtype=float)
        if rates.shape[0] != doc["station_count"]:
            raise ValueError("station_count does not match the rate table")

        def opt(key, dtype):
            return np.array(doc[key], dtype=dtype) if key in doc else None

        return cls(RateTable(rates, opt("observed_trips", np.int64), opt("observed_intervals", np.int64)),
                   DestTable(np.array(doc["dest_probs"], dtype=float), opt("observed_dest_trips", np.int64)),
                   doc.get("utc_offset_h", DEFAULT_UTC_OFFSET_H))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "DemandModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def estimate(trips, n_stations: int, window: Optional[tuple] = None,
             utc_offset_h: float = DEFAULT_UTC_OFFSET_H) -> DemandModel:
    """Fit rates and destination tables from station-annotated trips.

    Trips are binned by the local hour and day category of their start.
    Each cell's rate is its trip count over the number of 2-minute
    intervals that cell was observed for within ``window`` (UTC seconds,
    half-open; defaults to the whole local days spanned by the trips).
    Destination tables pool all day categories; a (station, hour) with no
    departures gets a uniform distribution over all stations.
    """
    S = n_stations
    counts = np.zeros((S, 3, 24), dtype=np.int64)
    od = np.zeros((S, 24, S), dtype=np.int64)
    starts = []
    for tr in trips:
        if tr.origin_station is None or tr.dest_station is None:
            raise ValueError(f"trip of {tr.bike_id} at {tr.t_start} lacks station annotation")
        hour, cat = local_hour_and_category(tr.t_start, utc_offset_h)
        counts[tr.origin_station, cat, hour] += 1
        od[tr.origin_station, hour, tr.dest_station] += 1
        starts.append(tr.t_start)
    if window is None:
        if starts:
            off = int(round(utc_offset_h * 3600))
            lo = (min(starts) + off) // 86400 * 86400 - off
            hi = ((max(starts) + off) // 86400 + 1) * 86400 - off
            window = (lo, hi)
        else:
            window = (0, 0)
    intervals = count_category_hours(*window, utc_offset_h) * INTERVALS_PER_HOUR
    if np.any((counts.sum(axis=0) > 0) & (intervals == 0)):
        raise ValueError("trips fall outside the observation window")
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(intervals[None] > 0, counts / np.maximum(intervals[None], 1), 0.0)
    observed = od.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = np.where(observed[..., None] > 0, od / np.maximum(observed[..., None], 1), 1.0 / S)
    return DemandModel(RateTable(rates, counts, intervals), DestTable(probs, observed), utc_offset_h)


@dataclass
class ScenarioSet:
    """Sampled demand: ``od[k, tau, s, d]`` trips from s to d in scenario k
    during hour ``start + tau``. Inflow and outflow derive from it, so
    per scenario-hour totals always balance.
    """

    start: int
    od: np.ndarray

    @property
    def horizon(self) -> int:
        return self.od.shape[1]

    @property
    def n_scenarios(self) -> int:
        return self.od.shape[0]

    @property
    def inflow(self) -> np.ndarray:  # F+ (K, T, S)
        return self.od.sum(axis=2)

    @property
    def outflow(self) -> np.ndarray:  # F- (K, T, S)
        return self.od.sum(axis=3)

    def net_flow(self) -> np.ndarray:
        """Cumulative F+ - F- over the horizon, shape (K, S)."""
        return (self.inflow - self.outflow).sum(axis=1)

    def trips(self, k: int, tau: int) -> list:
        """(origin, destination) pairs of scenario ``k`` at offset ``tau``."""
        m = self.od[k, tau]
        out = []
        for s, d in zip(*np.nonzero(m)):
            out.extend([(int(s), int(d))] * int(m[s, d]))
        return out


def sample_scenarios(model: DemandModel, start: int, T: int, K: int, seed) -> ScenarioSet:
    """Draw ``K`` demand scenarios for hours ``start .. start+T-1``.

    ``start`` is an hourly timestep index (0 = Monday 00:00). Scenario k
    uses its own RNG stream spawned from ``seed``.
    """
    if T < 1 or K < 1:
        raise ValueError("T and K must be >= 1")
    rates = model.rates.rates
    probs = model.dests.probs
    S = rates.shape[0]
    od = np.zeros((K, T, S, S), dtype=np.int64)
    streams = np.random.SeedSequence(seed).spawn(K)
    for k, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        for tau in range(T):
            idx = start + tau
            cat, hour = day_category(idx), idx % 24
            lam = rates[:, cat, hour]
            out = rng.poisson(lam[:, None], size=(S, INTERVALS_PER_HOUR)).sum(axis=1)
            for s in np.flatnonzero(out):
                od[k, tau, s] = rng.multinomial(out[s], probs[s, hour])
    return ScenarioSet(start, od)
