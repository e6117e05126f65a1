import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dockless.core import (
    EARTH_RADIUS_M,
    DayCategory,
    GeoPoint,
    LocalProjection,
    Ping,
    TimeStep,
    count_category_hours,
    day_category,
    destination_point,
    format_timestamp,
    geodesic,
    haversine_m,
    local_hour_and_category,
    local_midnight_utc,
    parse_timestamp,
)

lats = st.floats(-80, 80)
lons = st.floats(-179, 179)


def vincenty_sphere(lat1, lon1, lat2, lon2):
    """Great-circle distance via the atan2 (Vincenty, sphere) form."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    num = math.hypot(math.cos(p2) * math.sin(dl),
                     math.cos(p1) * math.sin(p2) - math.sin(p1) * math.cos(p2) * math.cos(dl))
    den = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_M * math.atan2(num, den)


class TestHaversine:
    def test_one_degree_of_latitude(self):
        assert haversine_m(0.0, 0.0, 1.0, 0.0) == pytest.approx(EARTH_RADIUS_M * math.pi / 180, rel=1e-12)

    def test_zero_distance(self):
        assert haversine_m(1.3, 103.8, 1.3, 103.8) == 0.0

    def test_antipodes(self):
        assert haversine_m(0.0, 0.0, 0.0, 180.0) == pytest.approx(math.pi * EARTH_RADIUS_M)

    def test_vectorized(self):
        d = haversine_m(np.zeros(3), np.zeros(3), np.array([0.0, 1.0, 2.0]), np.zeros(3))
        assert d.shape == (3,)
        assert d[2] == pytest.approx(2 * d[1])

    @settings(max_examples=200, deadline=None)
    @given(lats, lons, lats, lons)
    def test_matches_independent_formula(self, a, b, c, d):
        assert haversine_m(a, b, c, d) == pytest.approx(vincenty_sphere(a, b, c, d), abs=1e-3)

    @settings(max_examples=100, deadline=None)
    @given(lats, lons, lats, lons)
    def test_symmetric(self, a, b, c, d):
        assert haversine_m(a, b, c, d) == pytest.approx(haversine_m(c, d, a, b), abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(lats, lons, st.floats(0, 360), st.floats(0, 50_000))
    def test_destination_point_inverts(self, lat, lon, bearing, dist):
        p = GeoPoint(lat, lon)
        assert geodesic(p, destination_point(p, bearing, dist)) == pytest.approx(dist, abs=1e-4)


class TestGeoPoint:
    @pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 181), (float("nan"), 0),
                                         (0, float("inf"))])
    def test_rejects_out_of_range(self, lat, lon):
        with pytest.raises(ValueError):
            GeoPoint(lat, lon)

    def test_ping_needs_bike(self):
        with pytest.raises(ValueError):
            Ping("", 0, GeoPoint(0, 0))


class TestCalendar:
    @pytest.mark.parametrize("index,cat", [(0, DayCategory.MON_THU), (3 * 24 + 23, DayCategory.MON_THU),
                                           (4 * 24, DayCategory.FRI), (5 * 24, DayCategory.SAT_SUN),
                                           (6 * 24 + 23, DayCategory.SAT_SUN), (7 * 24, DayCategory.MON_THU)])
    def test_day_category(self, index, cat):
        assert day_category(index) == cat

    def test_negative_index(self):
        with pytest.raises(ValueError):
            day_category(-1)
        with pytest.raises(ValueError):
            TimeStep(-1)

    def test_timestep(self):
        ts = TimeStep(24 * 4 + 7)
        assert ts.hour_of_day == 7
        assert ts.day_category == DayCategory.FRI

    def test_local_hour_offset(self):
        t = local_midnight_utc(2017, 9, 8)  # a Friday
        assert local_hour_and_category(t) == (0, DayCategory.FRI)
        assert local_hour_and_category(t - 1) == (23, DayCategory.MON_THU)

    def test_timestamp_round_trip(self):
        assert parse_timestamp(format_timestamp(1504454400)) == 1504454400
        assert parse_timestamp("2017-09-04T08:00:00+08:00") == 1504483200
        assert parse_timestamp("2017-09-04T00:00:00") == parse_timestamp("2017-09-04T00:00:00Z")

    def test_count_category_hours_one_week(self):
        t = local_midnight_utc(2017, 9, 4)
        c = count_category_hours(t, t + 7 * 86400)
        assert c.tolist() == [[4] * 24, [1] * 24, [2] * 24]

    def test_count_category_hours_partial_hours_dropped(self):
        t = local_midnight_utc(2017, 9, 4)
        c = count_category_hours(t + 1, t + 3 * 3600 + 10)
        assert c.sum() == 2  # only 01:00 and 02:00 are whole hours


class TestProjection:
    def test_round_trip(self):
        proj = LocalProjection(1.4, 103.8)
        xy = proj.forward([1.41, 1.39], [103.81, 103.78])
        la, lo = proj.inverse(xy)
        assert np.allclose(la, [1.41, 1.39]) and np.allclose(lo, [103.81, 103.78])

    def test_close_to_geodesic_at_city_scale(self):
        proj = LocalProjection(1.4, 103.8)
        a, b = GeoPoint(1.40, 103.80), GeoPoint(1.43, 103.84)
        xy = proj.forward([a.lat, b.lat], [a.lon, b.lon])
        assert np.linalg.norm(xy[1] - xy[0]) == pytest.approx(geodesic(a, b), rel=1e-3)
