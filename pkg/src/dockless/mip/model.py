"""Single-timestep repositioning problem: instance, plan and plan checking.

Objective, for K scenarios, cost weights alpha (per repositioning trip and
scenario) and beta (per unit of lost demand):

    K * alpha * sum_{s,v} min(y+_{s,v}, 1)  -  beta * sum_{s,k} L_{s,k}

with L_{s,k} <= 0 and L_{s,k} <= d_s + net_flow_{k,s} + sum_v (y+ - y-).

All comparisons are done on integers: alpha and beta are held as exact
fractions and scaled by the least common multiple of their denominators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

FORMAT_VERSION = 1


def as_fraction(x) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats.

    Floats go through their shortest repr, so 0.1 becomes 1/10.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"non-finite weight {x}")
        return Fraction(repr(x))
    return Fraction(x)


def closed_form_lost_demand(d_s: int, net_flow: int, repo_net: int) -> int:
    """Optimal (least negative) lost demand given stock, net demand and repositioning."""
    return min(0, d_s + net_flow + repo_net)


@dataclass
class ProblemInstance:
    d: np.ndarray  # bikes per station, (S,)
    net_flow: np.ndarray  # cumulative in - out over the horizon, (K, S)
    vehicles: int
    cap: int
    alpha: Fraction = Fraction(1)
    beta: Fraction = Fraction(1)
    max_pickups: int = 1
    max_dropoffs: int = 1

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.int64).reshape(-1)
        self.net_flow = np.asarray(self.net_flow, dtype=np.int64)
        if self.net_flow.ndim == 1:
            self.net_flow = self.net_flow[None, :]
        self.alpha = as_fraction(self.alpha)
        self.beta = as_fraction(self.beta)
        if self.net_flow.shape[1] != len(self.d):
            raise ValueError("net_flow must have shape (K, S)")
        if self.net_flow.shape[0] < 1:
            raise ValueError("at least one scenario is required")
        if np.any(self.d < 0):
            raise ValueError("station stock must be non-negative")
        if self.vehicles < 0:
            raise ValueError("vehicle count must be non-negative")
        if self.cap < 1:
            raise ValueError("vehicle capacity must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("cost weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")
        if self.max_pickups < 1 or self.max_dropoffs < 1:
            raise ValueError("stop limits must be >= 1")

    @property
    def S(self) -> int:
        return len(self.d)

    @property
    def K(self) -> int:
        return self.net_flow.shape[0]

    @classmethod
    def from_scenarios(cls, d, scenarios, vehicles: int, cap: int, alpha=1, beta=1) -> "ProblemInstance":
        return cls(d, scenarios.net_flow(), vehicles, cap, alpha, beta)

    def scaled_weights(self) -> tuple[int, int, int]:
        """(trip_cost, loss_cost, denominator) as integers.

        trip_cost = K * alpha * D and loss_cost = beta * D, with D the lcm of
        the weight denominators; objective = integer value / D.
        """
        D = math.lcm(self.alpha.denominator, self.beta.denominator)
        return int(self.K * self.alpha * D), int(self.beta * D), D

    def with_vehicles(self, vehicles: int) -> "ProblemInstance":
        return ProblemInstance(self.d, self.net_flow, vehicles, self.cap, self.alpha, self.beta,
                               self.max_pickups, self.max_dropoffs)

    def with_weights(self, alpha, beta) -> "ProblemInstance":
        return ProblemInstance(self.d, self.net_flow, self.vehicles, self.cap, alpha, beta,
                               self.max_pickups, self.max_dropoffs)

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "stations": self.S,
            "scenarios": self.K,
            "vehicles": self.vehicles,
            "capacity": self.cap,
            "bikes": self.d.tolist(),
            "net_flow": self.net_flow.tolist(),
            "alpha": str(self.alpha),
            "beta": str(self.beta),
            "max_pickups": self.max_pickups,
            "max_dropoffs": self.max_dropoffs,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ProblemInstance":
        return cls(np.array(doc["bikes"]), np.array(doc["net_flow"]), int(doc["vehicles"]),
                   int(doc["capacity"]), Fraction(str(doc.get("alpha", 1))),
                   Fraction(str(doc.get("beta", 1))),
                   int(doc.get("max_pickups", 1)), int(doc.get("max_dropoffs", 1)))


def lost_demand_matrix(inst: ProblemInstance, repo_net) -> np.ndarray:
    """L as (S, K): the closed form applied to every station and scenario."""
    x = inst.d[None, :] + inst.net_flow + np.asarray(repo_net, dtype=np.int64)[None, :]
    return np.minimum(0, x).T


@dataclass
class RepositionPlan:
    y_plus: np.ndarray  # (S, V) bikes dropped
    y_minus: np.ndarray  # (S, V) bikes picked up
    b_plus: np.ndarray  # (S, V) 0/1
    b_minus: np.ndarray  # (S, V) 0/1
    L: np.ndarray  # (S, K) lost demand, <= 0
    objective: Fraction
    stats: dict = field(default_factory=dict)

    @property
    def trips(self) -> int:
        return int((self.y_plus >= 1).sum())

    @property
    def repo_net(self) -> np.ndarray:
        return (self.y_plus - self.y_minus).sum(axis=1)

    def moves(self) -> list:
        """(pickup, dropoff, bikes) per vehicle, idle vehicles included as bikes=0."""
        out = []
        for v in range(self.y_plus.shape[1]):
            p = int(np.argmax(self.b_minus[:, v]))
            q = int(np.argmax(self.b_plus[:, v]))
            out.append((p, q, int(self.y_plus[:, v].sum())))
        return out

    def assignment_vector(self) -> tuple:
        return tuple(self.moves())

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "objective": str(self.objective),
            "objective_value": float(self.objective),
            "trips": self.trips,
            "moves": [{"vehicle": v, "pickup": p, "dropoff": q, "bikes": m}
                      for v, (p, q, m) in enumerate(self.moves())],
            "y_plus": self.y_plus.tolist(),
            "y_minus": self.y_minus.tolist(),
            "b_plus": self.b_plus.tolist(),
            "b_minus": self.b_minus.tolist(),
            "lost_demand": self.L.tolist(),
            "stats": self.stats,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RepositionPlan":
        return cls(np.array(doc["y_plus"], dtype=np.int64), np.array(doc["y_minus"], dtype=np.int64),
                   np.array(doc["b_plus"], dtype=np.int64), np.array(doc["b_minus"], dtype=np.int64),
                   np.array(doc["lost_demand"], dtype=np.int64), Fraction(doc["objective"]),
                   doc.get("stats", {}))


def objective_of(inst: ProblemInstance, y_plus, L) -> Fraction:
    trips = int((np.asarray(y_plus) >= 1).sum())
    return inst.K * inst.alpha * trips - inst.beta * int(np.asarray(L).sum())


def plan_from_moves(inst: ProblemInstance, moves, stats: Optional[dict] = None) -> RepositionPlan:
    """Build the full variable set from one (pickup, dropoff, bikes) per vehicle.

    Missing vehicles are idle and park both indicators on station 0; an
    indicator may be 1 with no bikes moved, which costs nothing.
    """
    S, V = inst.S, inst.vehicles
    moves = list(moves) + [(0, 0, 0)] * (V - len(moves))
    if len(moves) != V:
        raise ValueError(f"{len(moves)} moves for {V} vehicles")
    yp = np.zeros((S, V), dtype=np.int64)
    ym = np.zeros((S, V), dtype=np.int64)
    bp = np.zeros((S, V), dtype=np.int64)
    bm = np.zeros((S, V), dtype=np.int64)
    for v, (p, q, m) in enumerate(moves):
        bm[p, v] = 1
        bp[q, v] = 1
        ym[p, v] += m
        yp[q, v] += m
    L = lost_demand_matrix(inst, (yp - ym).sum(axis=1))
    return RepositionPlan(yp, ym, bp, bm, L, objective_of(inst, yp, L), dict(stats or {}))


CONSTRAINTS = (
    "lost_demand_bound",
    "pickup_needs_visit",
    "vehicle_capacity",
    "station_stock",
    "dropoff_needs_visit",
    "load_balance",
    "pickup_stops",
    "dropoff_stops",
    "domains",
)


@dataclass
class Evaluation:
    objective: Fraction
    trips: int
    violations: dict  # constraint name -> first violating index, None if satisfied

    @property
    def ok(self) -> bool:
        return all(v is None for v in self.violations.values())

    def failed(self) -> list:
        return [k for k, v in self.violations.items() if v is not None]


def _first(mask) -> Optional[tuple]:
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if len(idx) else None


def evaluate(plan: RepositionPlan, inst: ProblemInstance) -> Evaluation:
    """Recompute the objective from scratch and check every constraint family.

    Trips are counted from bikes dropped (y+ >= 1), never from the visit
    indicators.
    """
    S, V, K = inst.S, inst.vehicles, inst.K
    yp, ym, bp, bm, L = (np.asarray(a) for a in (plan.y_plus, plan.y_minus, plan.b_plus,
                                                   plan.b_minus, plan.L))
    for name, a, shape in (("y_plus", yp, (S, V)), ("y_minus", ym, (S, V)), ("b_plus", bp, (S, V)),
                           ("b_minus", bm, (S, V)), ("L", L, (S, K))):
        if a.shape != shape:
            raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
    d = inst.d
    rhs = d[None, :] + inst.net_flow + (yp - ym).sum(axis=1)[None, :]  # (K, S)
    v = {
        "lost_demand_bound": _first(L > rhs.T),
        "pickup_needs_visit": _first(ym > bm * d[:, None]),
        "vehicle_capacity": _first(ym.sum(axis=0) > inst.cap),
        "station_stock": _first(ym.sum(axis=1) > d),
        "dropoff_needs_visit": _first(yp > bp * inst.cap),
        "load_balance": _first(yp.sum(axis=0) != ym.sum(axis=0)),
        "pickup_stops": _first(bm.sum(axis=0) != inst.max_pickups),
        "dropoff_stops": _first(bp.sum(axis=0) != inst.max_dropoffs),
        "domains": _first(
            np.concatenate([
                ((bp != 0) & (bp != 1)).ravel(), ((bm != 0) & (bm != 1)).ravel(),
                ((yp < 0) | (yp > inst.cap)).ravel(), ((ym < 0) | (ym > inst.cap)).ravel(),
                (L > 0).ravel(),
            ])),
    }
    return Evaluation(objective_of(inst, yp, L), int((yp >= 1).sum()), v)


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        return ProblemInstance.from_json(json.load(fh))
