"""Brute-force reference solver for small repositioning instances."""

from __future__ import annotations

import itertools

import numpy as np

from dockless.mip.model import ProblemInstance, RepositionPlan, plan_from_moves

MAX_ASSIGNMENTS = 10 ** 7


class GuardExceeded(ValueError):
    pass


def assignment_count(inst: ProblemInstance) -> int:
    return (inst.S ** 2 * (inst.cap + 1)) ** inst.vehicles


def solve_exhaustive(inst: ProblemInstance) -> RepositionPlan:
    """Try every (pickup, dropoff, bikes) triple for every vehicle.

    The objective is computed on integers independently of the main solver:
    trips count triples with bikes >= 1, lost demand comes from the closed
    form. Among optimal assignments the lexicographically smallest vector
    of triples (vehicle 0 first) wins.
    """
    if inst.S == 0:
        raise ValueError("instance has no stations")
    n = assignment_count(inst)
    if n > MAX_ASSIGNMENTS:
        raise GuardExceeded(f"{n} joint assignments exceed the limit of {MAX_ASSIGNMENTS}")
    S, V, C = inst.S, inst.vehicles, inst.cap
    trip_w, loss_w, _ = inst.scaled_weights()
    base = inst.d[None, :] + inst.net_flow  # (K, S)
    if V == 0:
        return plan_from_moves(inst, [], {"enumerated": 1})

    opts = np.array(list(itertools.product(range(S), range(S), range(C + 1))), dtype=np.int64)
    n_opt = len(opts)
    # effect of each option on every station: net bikes and pickups
    eye = np.eye(S, dtype=np.int64)
    delta = (eye[opts[:, 1]] - eye[opts[:, 0]]) * opts[:, 2:3]  # (n_opt, S)
    taken = eye[opts[:, 0]] * opts[:, 2:3]
    moving = (opts[:, 2] >= 1).astype(np.int64)

    best_val = None
    best_vec = None
    for prefix in itertools.product(range(n_opt), repeat=V - 1):
        pre = list(prefix)
        pre_delta = delta[pre].sum(axis=0) if pre else np.zeros(S, dtype=np.int64)
        pre_taken = taken[pre].sum(axis=0) if pre else np.zeros(S, dtype=np.int64)
        pre_trips = int(moving[pre].sum()) if pre else 0
        if np.any(pre_taken > inst.d):
            continue
        feasible = np.all(pre_taken[None, :] + taken <= inst.d[None, :], axis=1)
        r = pre_delta[None, :] + delta  # (n_opt, S)
        lost = np.maximum(0, -(base[None, :, :] + r[:, None, :])).sum(axis=(1, 2))
        val = trip_w * (pre_trips + moving) + loss_w * lost
        val = np.where(feasible, val, np.iinfo(np.int64).max)
        j = int(np.argmin(val))
        if not feasible[j]:
            continue
        if best_val is None or val[j] < best_val:
            best_val = int(val[j])
            best_vec = pre + [j]
    moves = [tuple(int(x) for x in opts[i]) for i in best_vec]
    return plan_from_moves(inst, moves, {"enumerated": n})
