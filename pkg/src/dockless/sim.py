"""Hourly simulation of a bike fleet under periodic repositioning.

Each step plans (every ``T`` hours) on ``K`` sampled demand scenarios,
applies the plan, then advances the station stock on one freshly drawn
hour of demand:

    d <- max(d + inflow - outflow + repositioning, 0)

Lost demand for the step is the shortfall the clamp absorbs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import IO, Optional, Sequence

import numpy as np

from dockless.core import day_category
from dockless.demand import DemandModel, sample_scenarios
from dockless.mip import ProblemInstance, solve

log = logging.getLogger(__name__)

STATIC = "static"
DYNAMIC = "dynamic"
STRATEGY_DEFAULTS = {
    STATIC: {"vehicles": 15, "T": 24},
    DYNAMIC: {"vehicles": 3, "T": 1},
}
RESULT_COLUMNS = ["step", "hour_of_day", "day_category", "lost_demand", "reposition_trips",
                  "total_bikes"]
SWEEP_COLUMNS = ["fleet_factor", "vehicles", "cumulative_lost_demand",
                 "cumulative_reposition_trips", "seed"]

# stream tags mixed into per-step seeds
_PLAN, _REALIZED = 0, 1


@dataclass
class StrategyConfig:
    name: str = DYNAMIC
    vehicles: Optional[int] = None
    T: Optional[int] = None
    K: int = 5
    cap: int = 10
    alpha: object = 1
    beta: object = 1
    iterations: int = 720
    seed: int = 0
    start: int = 0  # hourly timestep of the first step, 0 = Monday 00:00

    def __post_init__(self):
        if self.name not in STRATEGY_DEFAULTS:
            raise ValueError(f"unknown strategy {self.name!r}")
        defaults = STRATEGY_DEFAULTS[self.name]
        if self.vehicles is None:
            self.vehicles = defaults["vehicles"]
        if self.T is None:
            self.T = defaults["T"]
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.vehicles < 0:
            raise ValueError("vehicles must be >= 0")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def replace(self, **changes) -> "StrategyConfig":
        doc = self.to_dict()
        doc.update(changes)
        return StrategyConfig.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["alpha"] = str(Fraction(str(self.alpha)))
        doc["beta"] = str(Fraction(str(self.beta)))
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "StrategyConfig":
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        return cls(**known)


@dataclass
class StepRecord:
    step: int
    hour_of_day: int
    day_category: int
    lost_demand: int
    reposition_trips: int
    total_bikes: int
    clamped: bool = False


@dataclass
class SimState:
    t: int
    d: np.ndarray
    lost_demand_total: int = 0
    reposition_trip_total: int = 0
    history: list = field(default_factory=list)

    def write_csv(self, stream: IO[str]):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.history:
            w.writerow([r.step, r.hour_of_day, r.day_category, r.lost_demand, r.reposition_trips,
                        r.total_bikes])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def scale_fleet(d0, factor) -> np.ndarray:
    """floor(d0_s * factor) per station, computed exactly."""
    f = Fraction(repr(factor)) if isinstance(factor, float) else Fraction(factor)
    if not 0 < f <= 1:
        raise ValueError(f"fleet factor must be in (0, 1], got {factor}")
    d0 = np.asarray(d0, dtype=np.int64)
    if np.any(d0 < 0):
        raise ValueError("station counts must be non-negative")
    return np.array([int(x) * f.numerator // f.denominator for x in d0], dtype=np.int64)


def _initial_stock(stations) -> np.ndarray:
    if hasattr(stations, "inventory_vector"):
        return stations.inventory_vector()
    return np.asarray(stations, dtype=np.int64).copy()


def _seed(seed: int, step: int, tag: int) -> list:
    return [int(seed), int(step), tag]


def run(stations, model: DemandModel, cfg: StrategyConfig, fleet_factor=1.0,
        solver=solve) -> SimState:
    """Simulate ``cfg.iterations`` hourly steps.

    ``stations`` is a StationSet (its initial inventory is used) or a
    per-station bike count. Rebalancing happens on steps that are a
    multiple of ``cfg.T``; other steps move nothing.
    """
    d = _initial_stock(stations)
    if len(d) != model.n_stations:
        raise ValueError(f"{len(d)} stations but the demand model has {model.n_stations}")
    if fleet_factor != 1.0:
        d = scale_fleet(d, fleet_factor)
    state = SimState(cfg.start, d)
    alpha, beta = Fraction(str(cfg.alpha)), Fraction(str(cfg.beta))
    for step in range(cfg.iterations):
        t = cfg.start + step
        repo = np.zeros(len(d), dtype=np.int64)
        trips = 0
        if step % cfg.T == 0 and cfg.vehicles > 0:
            plan_sc = sample_scenarios(model, t, cfg.T, cfg.K, _seed(cfg.seed, step, _PLAN))
            inst = ProblemInstance(state.d, plan_sc.net_flow(), cfg.vehicles, cfg.cap, alpha, beta)
            plan = solver(inst)
            repo = plan.repo_net
            trips = plan.trips
        realized = sample_scenarios(model, t, 1, 1, _seed(cfg.seed, step, _REALIZED))
        x = state.d + realized.net_flow()[0] + repo
        lost = int(-np.minimum(x, 0).sum())
        state.d = np.maximum(x, 0)
        state.t = t + 1
        state.lost_demand_total += lost
        state.reposition_trip_total += trips
        state.history.append(StepRecord(step, t % 24, int(day_category(t)), lost, trips,
                                        int(state.d.sum()), bool(lost > 0)))
    return state


@dataclass
class SweepRow:
    fleet_factor: float
    vehicles: int
    cumulative_lost_demand: int
    cumulative_reposition_trips: int
    seed: int


def cell_seed(base_seed: int, factor, vehicles: int, replicate: int = 0) -> int:
    f = Fraction(repr(factor)) if isinstance(factor, float) else Fraction(factor)
    ss = np.random.SeedSequence([int(base_seed), f.numerator, f.denominator, int(vehicles),
                                 int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_cell(args):
    stations, model_doc, cfg_doc, factor = args
    model = DemandModel.from_json(model_doc)
    cfg = StrategyConfig.from_dict(cfg_doc)
    st = run(stations, model, cfg, factor)
    return st.lost_demand_total, st.reposition_trip_total


def sweep(stations, model: DemandModel, base_cfg: StrategyConfig, fleet_factors: Sequence,
          vehicle_counts: Sequence, replicates: int = 1, workers: int = 1) -> list:
    """Run every (fleet factor, vehicle count, replicate) cell.

    Each cell gets its own seed derived from ``base_cfg.seed`` and the cell
    coordinates, so results do not depend on execution order or ``workers``.
    """
    if not fleet_factors or not vehicle_counts:
        raise ValueError("fleet_factors and vehicle_counts must be non-empty")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    d0 = _initial_stock(stations)
    cells = []
    for f in fleet_factors:
        scale_fleet(d0, f)  # validate early
        for v in vehicle_counts:
            for rep in range(replicates):
                seed = cell_seed(base_cfg.seed, f, v, rep)
                cells.append((f, int(v), seed))
    jobs = [(d0, model.to_json(), base_cfg.replace(vehicles=v, seed=seed).to_dict(), f)
            for f, v, seed in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    return [SweepRow(float(f), v, lost, trips, seed)
            for (f, v, seed), (lost, trips) in zip(cells, results)]


def write_sweep_csv(rows: list, stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r.fleet_factor)), r.vehicles, r.cumulative_lost_demand,
                    r.cumulative_reposition_trips, r.seed])


def read_sweep_csv(stream: IO[str]) -> list:
    rows = []
    for rec in csv.DictReader(stream):
        missing = set(SWEEP_COLUMNS) - set(rec)
        if missing:
            raise ValueError(f"sweep CSV lacks columns {sorted(missing)}")
        rows.append(SweepRow(float(rec["fleet_factor"]), int(rec["vehicles"]),
                             int(rec["cumulative_lost_demand"]),
                             int(rec["cumulative_reposition_trips"]), int(rec["seed"])))
    return rows


def load_config(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    return doc
