"""Exact branch-and-bound for repositioning with one pickup and one dropoff
stop per vehicle.

Notation: c[k, s] = d_s + net_flow[k, s]. A station receiving r extra bikes
loses f_s(r) = sum_k max(0, -(c[k, s] + r)). Two facts shape the search:

* f_s is convex, so the marginal value of the u-th bike dropped at s (the
  number of scenarios still short) is non-increasing, and the marginal
  cost of the o-th bike taken from s is non-decreasing.
* Some optimal plan uses every station either only as a pickup or only as
  a dropoff, never moves a bike whose marginal value is zero, and so never
  has a vehicle whose pickup equals its dropoff.

The outer search enumerates multisets of (dropoff station, load) pairs in a
canonical order, which breaks vehicle symmetry. Each node is bounded by
relaxing the rest of the problem: remaining vehicles may split their load
freely over dropoffs (capped by whole-vehicle chunks), and pickups are
served by the cheapest bikes anywhere. An inner search then assigns each
load to a pickup station exactly.
"""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from dockless.mip.model import ProblemInstance, RepositionPlan, plan_from_moves

log = logging.getLogger(__name__)


class UnsupportedInstance(ValueError):
    pass


@dataclass
class SearchStats:
    nodes: int = 0
    leaves: int = 0
    source_searches: int = 0
    elapsed_s: float = 0.0
    optimal: bool = True

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@functools.lru_cache(maxsize=200_000)
def _subsets(distinct: tuple, rem: tuple, room: int) -> tuple:
    """Non-empty sub-multisets of ``rem`` (counts per size in ``distinct``)
    with total at most ``room``, as (counts, total, number of loads)."""
    out = []

    def go(k, left, take, tot, cnt):
        if k == len(rem):
            if tot:
                out.append((tuple(take), tot, cnt))
            return
        z = distinct[k]
        for c in range(min(rem[k], left // z) + 1):
            take.append(c)
            go(k + 1, left - c * z, take, tot + c * z, cnt + c)
            take.pop()

    go(0, room, [], 0, 0)
    return tuple(out)


def _min_cost_packing(sizes: list, bins: list, cap: dict, cum: dict, limit: float = math.inf):
    """Assign every load to one station at least total cost, if below ``limit``.

    Station b holding x bikes costs cum[b][x] (convex, x <= cap[b]).
    Dynamic programme over stations; the state is the multiset of loads
    still unassigned. Only stations among the n cheapest for some amount
    (n = number of loads) are kept: any other station can be swapped for
    an unused one of those at no extra cost. States are pruned with the
    cheapest cost of the remaining bikes from at most as many of the
    remaining stations as there are loads left.

    Returns (cost, station per load in ``sizes`` order) or (inf, None).
    """
    n, U = len(sizes), sum(sizes)
    if n == 0:
        return 0, []
    table = np.full((len(bins), U + 1), np.inf)
    for i, b in enumerate(bins):
        c = cum[b][:min(cap[b], U) + 1]
        table[i, :len(c)] = c
    keep = np.unique(np.argsort(table[:, 1:], axis=0, kind="stable")[:n].ravel())
    keep = [i for i in keep if np.isfinite(table[i, 1])]
    keep.sort(key=lambda i: (table[i, min(n, U)], bins[i]))
    B = [bins[i] for i in keep]
    caps = [min(cap[b], U) for b in B]
    room = np.concatenate([np.cumsum(caps[::-1])[::-1], [0]]).tolist()

    # few[i][k][u]: u bikes from the stations i..end using at most k loads,
    # where x bikes at one station take at least ceil(x / largest load)
    zmax = max(sizes)
    few = np.full((len(B) + 1, n + 1, U + 1), np.inf)
    few[:, :, 0] = 0.0
    for i in range(len(B) - 1, -1, -1):
        few[i] = few[i + 1]
        row = table[keep[i]]
        for x in range(1, caps[i] + 1):
            a = -(-x // zmax)
            if a > n:
                break
            np.minimum(few[i, a:, x:], few[i + 1, :n + 1 - a, :U + 1 - x] + row[x],
                       out=few[i, a:, x:])
    few = few.tolist()

    distinct = sorted(set(sizes), reverse=True)
    start = tuple(sizes.count(z) for z in distinct)
    def subsets(rem, room_b, row):
        return sorted(_subsets(tuple(distinct), rem, room_b), key=lambda t: row[t[1]])

    memo = {}  # (i, rem) -> (value, exact)

    def f(i, rem, units, items, budget):
        """Exact optimum if it is below ``budget``, else some value >= budget."""
        if units == 0:
            return 0
        if units > room[i]:
            return math.inf
        lb = few[i][items][units]
        if lb >= budget:
            return lb
        key = (i, rem)
        hit = memo.get(key)
        if hit is not None and (hit[1] or hit[0] >= budget):
            return hit[0]
        best, choice = f(i + 1, rem, units, items, budget), None
        row = cum[B[i]]
        nxt = few[i + 1]
        for take, tot, cnt in subsets(rem, caps[i], row):
            ceiling = min(best, budget)
            c = row[tot]
            if c + nxt[items - cnt][units - tot] >= ceiling:
                continue
            v = c + f(i + 1, tuple(r - t for r, t in zip(rem, take)), units - tot, items - cnt,
                      ceiling - c)
            if v < best:
                best, choice = v, take
        if best < budget:
            memo[key] = (best, True, choice)
        else:
            memo[key] = (budget, False, None)
        return best if best < budget else max(best, budget)

    total = f(0, start, U, n, limit)
    if not total < limit:
        return math.inf, None
    slots = {z: [t for t, m in enumerate(sizes) if m == z] for z in distinct}
    picks = [None] * n
    rem, units = start, U
    for i in range(len(B)):
        if units == 0:
            break
        choice = memo[(i, rem)][2]
        if choice is None:
            continue
        for z, c in zip(distinct, choice):
            for _ in range(c):
                picks[slots[z].pop()] = B[i]
        units -= sum(z * c for z, c in zip(distinct, choice))
        rem = tuple(r - t for r, t in zip(rem, choice))
    return int(total), picks


class _Search:
    def __init__(self, inst: ProblemInstance, time_limit: Optional[float]):
        self.inst = inst
        self.phi, self.B, self.D = inst.scaled_weights()
        self.V, self.S, self.K = inst.vehicles, inst.S, inst.K
        # a load comes from one station, so it never exceeds the largest stock
        self.C = int(min(inst.cap, inst.d.max(initial=0)))
        self.UM = self.V * self.C
        self.deadline = None if time_limit is None else time.monotonic() + time_limit
        self.stats = SearchStats()
        c = inst.d[None, :] + inst.net_flow
        self.c = c
        self.base_loss = int(np.maximum(0, -c).sum())
        lim = self.UM

        # value of each successive bike dropped at a station (only positive values)
        self.gain = {}
        if self.B > 0 and self.V > 0:
            short = np.maximum(0, -c.min(axis=0))
            for s in np.flatnonzero(short):
                u = np.arange(min(int(short[s]), lim))
                self.gain[int(s)] = (c[None, :, s] + u[:, None] < 0).sum(axis=1)
        self.gain_cum = {s: np.concatenate([[0], np.cumsum(g)]).astype(float)
                         for s, g in self.gain.items()}

        # cost of each successive bike taken from a station
        self.cost = {}
        self.cum = {}
        for s in np.flatnonzero(inst.d):
            o = np.arange(min(int(inst.d[s]), lim))
            seq = (c[None, :, s] <= o[:, None]).sum(axis=1)
            self.cost[int(s)] = seq
            self.cum[int(s)] = [0] + np.cumsum(seq).tolist()
        if self.cost:
            st = np.concatenate([np.full(len(v), s) for s, v in self.cost.items()])
            pc = np.concatenate(list(self.cost.values()))
            order = np.argsort(pc, kind="stable")
            self.pool_cost, self.pool_st = pc[order], st[order]
        else:
            self.pool_cost = self.pool_st = np.zeros(0, dtype=np.int64)
        self._sc_cache = {}
        self._src_cache = {}

        # dropoff candidates, most valuable first
        self.rank = sorted(self.gain, key=lambda s: (-int(self.gain[s][:self.C].sum()), s))
        self.best = 0  # objective minus B * base_loss; the empty plan scores 0
        self.best_moves: list = []
        if self.V > 0 and self.C > 0 and self.rank:
            self._build_tables()

    # -- bounds ---------------------------------------------------------------
    #
    # Tables are indexed [vehicles, bikes] and mean "at most that many
    # vehicles". Dropoff tables hold the negated best value, so every table
    # is minimised.

    def _add_station(self, table: np.ndarray, cum) -> np.ndarray:
        """Fold one station into a table: x bikes there need ceil(x / C) vehicles."""
        out = table.copy()
        V, UM, C = self.V, self.UM, self.C
        for x in range(1, min(len(cum), UM + 1)):
            n = -(-x // C)
            if n > V:
                break
            np.minimum(out[n:, x:], table[:V + 1 - n, :UM + 1 - x] + cum[x], out=out[n:, x:])
        return out

    def _build_tables(self):
        V, UM = self.V, self.UM
        empty = np.full((V + 1, UM + 1), np.inf)
        empty[:, 0] = 0.0
        src = empty
        for s in self.cost:
            src = self._add_station(src, np.asarray(self.cum[s], dtype=float))
        self.src = src
        n = len(self.rank)
        self.sink_sfx = [empty] * (n + 1)
        for r in range(n - 1, -1, -1):
            self.sink_sfx[r] = self._add_station(self.sink_sfx[r + 1], -self.gain_cum[self.rank[r]])
        self._finish = {}
        pad = np.full((2 * V + 1, 2 * UM + 1), np.inf)
        pad[:V + 1, :UM + 1] = src
        self._src_pad = pad

    def _finish_tables(self, r: int):
        """(H, H1) for dropoffs of rank >= r.

        H[j, u]: least cost of adding new vehicles to a plan that already has
        j vehicles and u bikes, counting trip cost, dropoff value and the
        pickup cost of all bikes (committed ones included). H1 requires at
        least one new vehicle.
        """
        hit = self._finish.get(r)
        if hit is not None:
            return hit
        V, UM = self.V, self.UM
        sfx = self.sink_sfx[r]
        H1 = np.full((V + 1, UM + 1), np.inf)
        for b in range(1, V + 1):
            for y in np.flatnonzero(np.isfinite(sfx[b])):
                cand = self.phi * b + self.B * (sfx[b, y] + self._src_pad[b:b + V + 1, y:y + UM + 1])
                np.minimum(H1, cand, out=H1)
        H = np.minimum(H1, self.B * self.src)
        self._finish[r] = (H, H1)
        return H, H1

    def _open_bound(self, q: int, rec: int, m0: int, R: int, j: int, U: int, r: int,
                    need_new: bool) -> float:
        """Least completion cost while dropoff ``q`` (rank r) may take more loads.

        Up to R more vehicles: ``a`` of them bring x <= a * m0 more bikes to
        q, the rest go to dropoffs ranked after r.
        """
        H, H1 = self._finish_tables(r + 1)
        gc = self.gain_cum[q]
        top = len(gc) - 1
        aa = np.arange(R + 1)[:, None]
        xx = np.arange(R * m0 + 1)[None, :]
        gained = gc[np.minimum(rec + xx, top)] - gc[rec]
        J = np.minimum(j + aa, self.V)
        X = np.minimum(U + xx, self.UM)
        val = self.phi * aa - self.B * gained + H[J, X]
        ok = xx <= aa * m0
        if need_new:
            val = np.where(aa >= 1, val, np.inf)
            val[0, 0] = H1[j, U]
        return float(np.where(ok, val, np.inf).min())

    def _src_excl(self, sinks: frozenset) -> np.ndarray:
        """Pickup table like ``src`` restricted to non-dropoff stations."""
        hit = self._src_cache.get(sinks)
        if hit is not None:
            return hit
        V, UM = self.V, self.UM
        tab = np.full((V + 1, UM + 1), np.inf)
        tab[:, 0] = 0.0
        for s in self.cost:
            if s not in sinks:
                tab = self._add_station(tab, np.asarray(self.cum[s], dtype=float))
        if len(self._src_cache) > 20000:
            self._src_cache.clear()
        self._src_cache[sinks] = tab
        return tab

    def _sc(self, sinks: frozenset) -> np.ndarray:
        """Cheapest total pickup cost for 0..V*C bikes from non-dropoff stations."""
        hit = self._sc_cache.get(sinks)
        if hit is not None:
            return hit
        n = self.UM
        if sinks:
            vals = self.pool_cost[~np.isin(self.pool_st, list(sinks))][:n]
        else:
            vals = self.pool_cost[:n]
        out = np.full(n + 1, np.inf)
        out[0] = 0.0
        out[1:len(vals) + 1] = np.cumsum(vals)
        if len(self._sc_cache) > 50000:
            self._sc_cache.clear()
        self._sc_cache[sinks] = out
        return out

    # -- pickup assignment ---------------------------------------------------

    def _sources(self, loads: list, sinks: frozenset, limit: float):
        """Cheapest pickup station per load, if the total beats ``limit``.

        Loads go to distinct or shared non-dropoff stations within stock.
        Returns (cost, stations in load order) or None.
        """
        self.stats.source_searches += 1
        U = sum(m for _, m in loads)
        bins = [s for s in self.cost if s not in sinks]
        cap = {s: min(len(self.cost[s]), U) for s in bins}
        cum = self.cum
        order = sorted(range(len(loads)), key=lambda i: (-loads[i][1], i))
        sizes = [loads[i][1] for i in order]

        # greedy: each load (largest first) to the cheapest station that fits
        fill = dict.fromkeys(bins, 0)
        g_cost, g_pick = 0, []
        for m in sizes:
            pick, inc = None, None
            for s in bins:
                f = fill[s]
                if f + m <= cap[s]:
                    x = cum[s][f + m] - cum[s][f]
                    if inc is None or x < inc:
                        pick, inc = s, x
                        if x == 0:
                            break
            if pick is None:
                g_cost = None
                break
            fill[pick] += m
            g_cost += inc
            g_pick.append(pick)
        lower = self._src_excl(sinks)[len(loads), U]
        if g_cost is not None and g_cost <= lower:
            return self._in_load_order(order, g_pick, g_cost, limit)
        if lower >= limit:
            return None
        cost, picks = _min_cost_packing(sizes, bins, cap, cum, limit)
        if picks is None:
            return None
        return self._in_load_order(order, picks, cost, limit)

    @staticmethod
    def _in_load_order(order, picks, cost, limit):
        if cost >= limit:
            return None
        out = [None] * len(order)
        for i, s in zip(order, picks):
            out[i] = s
        return cost, out

    # -- incumbent ---------------------------------------------------------------

    def _loss(self, net: np.ndarray) -> np.ndarray:
        """Lost demand per station given net repositioning ``net``."""
        return np.maximum(0, -(self.c + net[None, :])).sum(axis=0)

    def _best_move(self, net, taken):
        """Cheapest single (pickup, dropoff, bikes) move on top of ``net``,
        as (change in search value, move), or (0, None) if none helps."""
        base = self._loss(net)
        stock = self.inst.d - taken
        best, move = 0, None
        if self.S < 2:
            return best, move
        for m in range(1, self.C + 1):
            into = self.B * (self._loss(net + m) - base)
            out = np.where(stock >= m, self.B * (self._loss(net - m) - base), np.inf)
            p1, p2 = np.argsort(out, kind="stable")[:2]
            # cheapest pickup other than the dropoff itself
            src = np.where(np.arange(self.S) == p1, out[p2], out[p1])
            val = self.phi + into + src
            q = int(np.argmin(val))
            if val[q] < best:
                p = int(p2) if q == p1 else int(p1)
                best, move = int(val[q]), (p, q, m)
        return best, move

    def _incumbent(self):
        """Greedy insertion then vehicle-by-vehicle reinsertion until stable."""
        S = self.S
        moves = []
        net = np.zeros(S, dtype=np.int64)
        taken = np.zeros(S, dtype=np.int64)

        def apply(mv, sign):
            p, q, m = mv
            net[p] -= sign * m
            net[q] += sign * m
            taken[p] += sign * m

        while len(moves) < self.V:
            delta, mv = self._best_move(net, taken)
            if mv is None:
                break
            moves.append(mv)
            apply(mv, 1)
        improved = True
        while improved and moves:
            improved = False
            for i in range(len(moves)):
                old = moves[i]
                apply(old, -1)
                before = self._loss(net).sum()
                keep = self.phi + self.B * (self._loss(self._shift(net, old)).sum() - before)
                delta, mv = self._best_move(net, taken)
                if mv is not None and delta < keep:
                    moves[i] = mv
                    improved = True
                apply(moves[i], 1)
            if self.V > len(moves):
                delta, mv = self._best_move(net, taken)
                if mv is not None:
                    moves.append(mv)
                    apply(mv, 1)
                    improved = True
        val = self.phi * len(moves) + self.B * (int(self._loss(net).sum()) - self.base_loss)
        return val, moves

    @staticmethod
    def _shift(net, mv):
        p, q, m = mv
        out = net.copy()
        out[p] -= m
        out[q] += m
        return out

    # -- outer search ----------------------------------------------------------

    def _out_of_time(self) -> bool:
        if self.deadline is not None and time.monotonic() > self.deadline:
            self.stats.optimal = False
            return True
        return False

    def _consider(self, loads, sinks, committed):
        self.stats.leaves += 1
        limit = (self.best - committed) / self.B
        res = self._sources(loads, sinks, limit)
        if res is None:
            return
        cost, picks = res
        val = committed + self.B * cost
        if val < self.best:
            self.best = val
            self.best_moves = [(p, q, m) for p, (q, m) in zip(picks, loads)]

    def _dfs(self, loads, sinks, j, U, G, r0, m0, rec0):
        """Nodes are multisets of (dropoff, load) listed in rank order, loads
        non-increasing per dropoff; (r0, m0, rec0) describe the last one."""
        self.stats.nodes += 1
        if self._out_of_time():
            return
        committed = self.phi * j - self.B * G
        if j > 0:
            own = committed + self.B * self._src_excl(sinks)[j, U]
            if own < self.best:
                self._consider(loads, sinks, committed)
        R = self.V - j
        if R == 0:
            return
        for r in range(max(r0, 0), len(self.rank)):
            q = self.rank[r]
            g = self.gain[q]
            if r == r0:
                start, mmax = rec0, min(self.C, m0, len(g) - rec0)
                if mmax <= 0:
                    continue
                lb = self._open_bound(q, rec0, m0, R, j, U, r, need_new=True)
            else:
                start, mmax = 0, min(self.C, len(g))
                lb = self._finish_tables(r)[1][j, U]
            if committed + lb >= self.best:
                break  # later ranks only see a subset of these dropoffs
            child_sinks = sinks | {q}
            sc_child = self._sc(child_sinks)
            for m in range(mmax, 0, -1):
                if not np.isfinite(sc_child[U + m]):
                    continue
                G2 = G + int(self.gain_cum[q][start + m] - self.gain_cum[q][start])
                committed2 = self.phi * (j + 1) - self.B * G2
                lb = self._open_bound(q, start + m, m, R - 1, j + 1, U + m, r, need_new=False)
                if committed2 + lb < self.best:
                    self._dfs(loads + [(q, m)], child_sinks, j + 1, U + m, G2, r, m, start + m)

    def run(self) -> list:
        if self.V > 0 and self.C > 0 and self.rank:
            val, moves = self._incumbent()
            if val < self.best:
                self.best, self.best_moves = val, moves
            self._dfs([], frozenset(), 0, 0, 0, -1, self.C, 0)
        return self.best_moves


def solve(inst: ProblemInstance, time_limit: Optional[float] = None) -> RepositionPlan:
    """Optimal repositioning plan for one timestep.

    Plans list active vehicles in ascending (pickup, dropoff, bikes) order
    after idle ones. ``time_limit`` (seconds) is a safety valve: when hit,
    the best plan found so far is returned with ``stats["optimal"] = False``.
    """
    if inst.S == 0:
        raise ValueError("instance has no stations")
    if inst.max_pickups != 1 or inst.max_dropoffs != 1:
        raise UnsupportedInstance("only one pickup and one dropoff stop per vehicle is supported")
    t0 = time.perf_counter()
    search = _Search(inst, time_limit)
    moves = search.run()
    search.stats.elapsed_s = time.perf_counter() - t0
    if not search.stats.optimal:
        log.warning("solver stopped at the time limit; plan may be suboptimal")
    idle = [(0, 0, 0)] * (inst.vehicles - len(moves))
    plan = plan_from_moves(inst, idle + sorted(moves), search.stats.as_dict())
    expected = Fraction(search.best + search.B * search.base_loss, search.D)
    if plan.objective != expected:  # pragma: no cover - internal consistency
        raise AssertionError(f"plan objective {plan.objective} != search value {expected}")
    return plan
