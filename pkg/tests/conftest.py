import numpy as np
import pytest

from dockless.core import GeoPoint, Ping, destination_point
from dockless.demand import DemandModel, DestTable, RateTable, sample_scenarios
from dockless.mip import ProblemInstance
from dockless.synth import imbalanced_system

ORIGIN = GeoPoint(1.436, 103.786)
T0 = 1_504_454_400  # 2017-09-04 00:00 local (+8h), a Monday


def random_instance(rng, max_s=5, max_v=2, max_cap=3, max_k=2) -> ProblemInstance:
    """One draw from the small instance family the brute-force oracle can handle.

    (alpha, beta) = (0, 0) is not a valid instance and is redrawn.
    """
    S = int(rng.integers(1, max_s + 1))
    V = int(rng.integers(0, max_v + 1))
    cap = int(rng.integers(1, max_cap + 1))
    K = int(rng.integers(1, max_k + 1))
    while True:
        a, b = (int(x) for x in rng.integers(0, 3, 2))
        if a or b:
            break
    return ProblemInstance(rng.integers(0, 11, S), rng.integers(-10, 11, (K, S)), V, cap, a, b)


def oracle_family(n, seed):
    rng = np.random.default_rng(seed)
    return [random_instance(rng) for _ in range(n)]


def model_of(gt) -> DemandModel:
    return DemandModel(RateTable(gt.rates), DestTable(gt.dest_probs))


def paper_scale_instance(seed=0, bikes_per_station=15) -> ProblemInstance:
    """120 stations, 15 vehicles of capacity 10, five 24-hour scenarios."""
    gt = imbalanced_system(120, bikes_per_station=bikes_per_station, seed=seed)
    sc = sample_scenarios(model_of(gt), 0, 24, 5, seed)
    return ProblemInstance(gt.fleet, sc.net_flow(), 15, 10, 1, 1)


def ping_pair(dt_s, dist_m, bike="b1", t0=T0, bearing=45.0):
    """Two pings of one bike ``dt_s`` seconds and ``dist_m`` meters apart."""
    return (Ping(bike, t0, ORIGIN),
            Ping(bike, t0 + dt_s, destination_point(ORIGIN, bearing, dist_m)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_system():
    gt = imbalanced_system(6, bikes_per_station=6, seed=3)
    return gt, model_of(gt)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, taken from test_acceptance.py."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", None) != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                verdict = "PASS" if outcome == "passed" else "FAIL"
                lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {verdict}  "
                                                  f"{props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
