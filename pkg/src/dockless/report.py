"""Summary statistics and figures for sweep results.

For each sweep (one per strategy, typically) and vehicle count, lost
demand and repositioning trips are regressed on the fleet factor by
ordinary least squares; the Spearman rank correlation of lost demand
against fleet factor is reported alongside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np
from scipy import stats

SUMMARY_COLUMNS = ["label", "vehicles", "n", "lost_slope", "lost_intercept", "lost_r2",
                   "trips_slope", "trips_intercept", "trips_r2", "spearman_rho", "spearman_p"]


@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float


def ols(x, y) -> Fit:
    """Least-squares line through (x, y).

    R^2 is 1 when y is constant (the line fits exactly) and NaN when x is.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need at least two paired observations")
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    if sxx == 0:
        return Fit(math.nan, math.nan, math.nan)
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    sst = ((y - ym) ** 2).sum()
    sse = ((y - intercept - slope * x) ** 2).sum()
    r2 = 1.0 if sst == 0 else 1.0 - sse / sst
    return Fit(float(slope), float(intercept), float(r2))


@dataclass
class SummaryRow:
    label: str
    vehicles: int
    n: int
    lost: Fit
    trips: Fit
    spearman_rho: float
    spearman_p: float


def summarize(rows: Sequence, label: str = "") -> list:
    """One SummaryRow per vehicle count found in ``rows`` (SweepRow-like)."""
    out = []
    for v in sorted({r.vehicles for r in rows}):
        cell = [r for r in rows if r.vehicles == v]
        x = [r.fleet_factor for r in cell]
        lost = [r.cumulative_lost_demand for r in cell]
        trips = [r.cumulative_reposition_trips for r in cell]
        if len(set(x)) < 2:
            rho, p = math.nan, math.nan
        else:
            res = stats.spearmanr(x, lost)
            rho, p = float(res.statistic), float(res.pvalue)
        out.append(SummaryRow(label, v, len(cell), ols(x, lost), ols(x, trips), rho, p))
    return out


def _fmt(x) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(x) if isinstance(x, float) else str(x)


def write_summary_csv(summary: list, stream: IO[str]):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summary:
        w.writerow([s.label, s.vehicles, s.n,
                    _fmt(s.lost.slope), _fmt(s.lost.intercept), _fmt(s.lost.r2),
                    _fmt(s.trips.slope), _fmt(s.trips.intercept), _fmt(s.trips.r2),
                    _fmt(s.spearman_rho), _fmt(s.spearman_p)])


def plot_sweeps(sweeps: dict, out_prefix) -> list:
    """Scatter plus fitted line of lost demand and trips against fleet factor.

    ``sweeps`` maps a label to its rows. Writes ``<prefix>_lost_demand.png``
    and ``<prefix>_trips.png`` and returns their paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_prefix = Path(out_prefix)
    paths = []
    for key, ylabel in (("cumulative_lost_demand", "cumulative lost demand"),
                        ("cumulative_reposition_trips", "repositioning trips")):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, rows in sweeps.items():
            for v in sorted({r.vehicles for r in rows}):
                cell = [r for r in rows if r.vehicles == v]
                x = np.array([r.fleet_factor for r in cell])
                y = np.array([getattr(r, key) for r in cell], dtype=float)
                name = f"{label} V={v}" if label else f"V={v}"
                pts = ax.scatter(x, y, s=14, label=name)
                fit = ols(x, y) if len(set(x)) > 1 else None
                if fit is not None:
                    xs = np.linspace(x.min(), x.max(), 20)
                    ax.plot(xs, fit.intercept + fit.slope * xs, color=pts.get_facecolor()[0],
                            linewidth=1)
        ax.set_xlabel("fleet factor")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        suffix = "lost_demand" if key == "cumulative_lost_demand" else "trips"
        path = out_prefix.with_name(f"{out_prefix.name}_{suffix}.png")
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
