import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dockless.core import GeoPoint, Trip, local_midnight_utc
from dockless.demand import DemandModel, DestTable, RateTable, estimate, sample_scenarios

MONDAY = local_midnight_utc(2017, 9, 4)


def trip(origin, dest, t):
    p = GeoPoint(1.4, 103.8)
    return Trip("b", t, t + 600, p, p, origin, dest)


def model_with(rates, probs=None):
    rates = np.asarray(rates, dtype=float)
    S = rates.shape[0]
    if probs is None:
        probs = np.full((S, 24, S), 1.0 / S)
    return DemandModel(RateTable(rates), DestTable(probs))


class TestEstimate:
    def test_counting_example(self):
        # the first 15 Monday-Thursday days, two trips at 08:xx on each
        days = [MONDAY + (w * 7 + d) * 86400 for w in range(4) for d in range(4)][:15]
        trips = [trip(5, 9, day + 8 * 3600 + 60 * i) for day in days for i in range(2)]
        m = estimate(trips, 10, window=(MONDAY, days[-1] + 86400))
        assert m.rates.intervals[0, 8] == 15 * 30
        assert m.rates.rates[5, 0, 8] == pytest.approx(1 / 15)

    def test_rate_recomputable(self):
        trips = [trip(s, (s + 1) % 3, MONDAY + 3600 * h) for s in range(3) for h in range(0, 200, 7)]
        m = estimate(trips, 3)
        r = m.rates
        mask = r.intervals[None] > 0
        assert np.allclose(r.rates[np.broadcast_to(mask, r.rates.shape)],
                           (r.trips / np.maximum(r.intervals[None], 1))[np.broadcast_to(mask, r.rates.shape)])

    def test_silent_station_zero_rates(self):
        m = estimate([trip(0, 1, MONDAY + 3600)], 3)
        assert (m.rates.rates[2] == 0).all()
        assert np.allclose(m.dests.probs[2], 1 / 3)  # uniform fallback

    def test_single_trip_destination(self):
        m = estimate([trip(5, 9, MONDAY + 8 * 3600)], 10)
        assert m.dests.probs[5, 8, 9] == 1.0

    def test_missing_annotation(self):
        p = GeoPoint(1.4, 103.8)
        with pytest.raises(ValueError):
            estimate([Trip("b", MONDAY, MONDAY + 600, p, p)], 2)

    def test_trip_outside_window(self):
        with pytest.raises(ValueError):
            estimate([trip(0, 1, MONDAY + 5 * 86400)], 2, window=(MONDAY, MONDAY + 86400))

    def test_json_round_trip(self, tmp_path):
        m = estimate([trip(0, 1, MONDAY + 3600), trip(1, 0, MONDAY + 7200)], 2)
        m.save(tmp_path / "m.json")
        back = DemandModel.load(tmp_path / "m.json")
        assert np.array_equal(back.rates.rates, m.rates.rates)
        assert np.array_equal(back.dests.probs, m.dests.probs)
        assert np.array_equal(back.rates.trips, m.rates.trips)

    def test_version_checked(self):
        doc = model_with(np.zeros((2, 3, 24))).to_json()
        doc["version"] = 99
        with pytest.raises(ValueError):
            DemandModel.from_json(doc)


class TestSampling:
    def test_zero_rates_zero_flows(self):
        sc = sample_scenarios(model_with(np.zeros((4, 3, 24))), 5, 6, 3, seed=0)
        assert sc.od.sum() == 0 and sc.od.shape == (3, 6, 4, 4)

    def test_mean_hourly_demand(self):
        rates = np.zeros((2, 3, 24))
        rates[0] = 0.5
        sc = sample_scenarios(model_with(rates), 0, 100, 100, seed=1)
        out = sc.outflow[:, :, 0].ravel()
        assert len(out) == 10_000
        assert out.mean() == pytest.approx(15.0, rel=0.01)

    def test_poisson_sum_goodness_of_fit(self):
        rates = np.zeros((1, 3, 24))
        rates[0] = 0.1
        sc = sample_scenarios(model_with(rates), 0, 100, 100, seed=2)
        x = sc.outflow[:, :, 0].ravel()
        mu = 3.0
        kmax = 9
        observed = np.array([(x == k).sum() for k in range(kmax)] + [(x >= kmax).sum()])
        probs = np.append(stats.poisson.pmf(np.arange(kmax), mu), stats.poisson.sf(kmax - 1, mu))
        res = stats.chisquare(observed, probs * len(x))
        assert res.pvalue > 0.001

    def test_destination_frequencies(self):
        rates = np.zeros((3, 3, 24))
        rates[0] = 1.0
        probs = np.full((3, 24, 3), 1 / 3)
        probs[0] = [0.0, 0.3, 0.7]
        sc = sample_scenarios(model_with(rates, probs), 0, 12, 30, seed=3)
        dest = sc.od[:, :, 0, :].sum(axis=(0, 1))
        n = dest.sum()
        assert n >= 10_000
        assert dest[1] / n == pytest.approx(0.3, abs=0.02)
        assert dest[2] / n == pytest.approx(0.7, abs=0.02)

    def test_deterministic_and_trips_listing(self, small_system):
        _, model = small_system
        a = sample_scenarios(model, 30, 5, 3, seed=[4, 2])
        b = sample_scenarios(model, 30, 5, 3, seed=[4, 2])
        assert np.array_equal(a.od, b.od)
        pairs = a.trips(1, 2)
        assert len(pairs) == a.od[1, 2].sum()

    def test_invalid_horizon(self, small_system):
        _, model = small_system
        with pytest.raises(ValueError):
            sample_scenarios(model, 0, 0, 1, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 500), st.integers(1, 4), st.integers(1, 3))
    def test_flows_conserve(self, seed, start, T, K):
        rates = np.random.default_rng(seed).uniform(0, 0.5, (5, 3, 24))
        sc = sample_scenarios(model_with(rates), start, T, K, seed)
        assert np.array_equal(sc.inflow.sum(axis=2), sc.outflow.sum(axis=2))
        assert (sc.net_flow().sum(axis=1) == 0).all()
