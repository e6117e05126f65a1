import io

import pytest

from dockless.core import GeoPoint, Ping, destination_point
from dockless.ingest import (
    BikeHistory,
    IngestError,
    ParseReport,
    build_histories,
    extract_all,
    extract_trips,
    idle_intervals,
    is_trip,
    parse_pings,
    read_trips,
    usage_stats,
    write_pings,
    write_trips,
)

from conftest import T0, ping_pair


class TestTripFilters:
    @pytest.mark.parametrize("dt,ok", [(179, False), (180, True)])
    def test_duration_boundary(self, dt, ok):
        assert is_trip(*ping_pair(dt, 500.0)) is ok

    @pytest.mark.parametrize("dist,ok", [(199.0, False), (200.0, True)])
    def test_distance_boundary(self, dist, ok):
        assert is_trip(*ping_pair(600, dist)) is ok

    @pytest.mark.parametrize("kmh,ok", [(25.0, True), (25.1, False)])
    def test_speed_boundary(self, kmh, ok):
        dt = 360
        assert is_trip(*ping_pair(dt, kmh / 3.6 * dt)) is ok

    def test_extract_agrees_with_pairwise_rule(self, rng):
        pings = [Ping("b", T0, GeoPoint(1.436, 103.786))]
        for _ in range(60):
            last = pings[-1]
            pos = destination_point(last.pos, float(rng.uniform(0, 360)), float(rng.uniform(50, 3000)))
            pings.append(Ping("b", last.t + int(rng.integers(60, 900)), pos))
        trips = extract_trips(BikeHistory("b", pings))
        expected = [(p.t, q.t) for p, q in zip(pings, pings[1:]) if is_trip(p, q)]
        assert [(tr.t_start, tr.t_end) for tr in trips] == expected


class TestParse:
    CSV = ("bike_id,timestamp,lat,lon\n"
           "b1,2017-09-04T00:00:00Z,1.40,103.80\n"
           "b1,2017-09-04T00:10:00Z,1.41,103.80\n"
           "b2,not-a-time,1.40,103.80\n"
           "b3,2017-09-04T00:00:00Z,95,103.80\n"
           "b4,2017-09-04T00:00:00Z,1.4\n")

    def test_lenient_collects_errors(self):
        pings, report = parse_pings(io.StringIO(self.CSV))
        assert len(pings) == 2
        assert [ln for ln, _ in report.errors] == [4, 5, 6]
        assert report.rows_read == 5

    def test_strict_raises_on_first(self):
        with pytest.raises(IngestError, match="line 4"):
            parse_pings(io.StringIO(self.CSV), strict=True)

    def test_bytes_and_headerless(self):
        pings, report = parse_pings(b"b1,2017-09-04T00:00:00Z,1.4,103.8\n")
        assert len(pings) == 1 and report.error_count == 0

    def test_round_trip(self):
        pings, _ = parse_pings(io.StringIO(self.CSV))
        buf = io.StringIO()
        write_pings(pings, buf)
        again, rep = parse_pings(io.StringIO(buf.getvalue()))
        assert again == pings and rep.error_count == 0

    def test_report_write(self):
        rep = ParseReport()
        rep.add(3, "bad")
        rep.duplicates = 2
        out = io.StringIO()
        rep.write(out)
        assert "line 3: bad" in out.getvalue() and "2 duplicate" in out.getvalue()


class TestHistories:
    def test_sorted_and_deduplicated(self):
        a = Ping("b", T0 + 10, GeoPoint(1.4, 103.8))
        b = Ping("b", T0, GeoPoint(1.41, 103.8))
        dup = Ping("b", T0 + 10, GeoPoint(1.42, 103.8))
        rep = ParseReport()
        h = build_histories([a, b, dup], rep)
        assert [p.t for p in h["b"].pings] == [T0, T0 + 10]
        assert h["b"].pings[1] == a  # first in input order wins
        assert rep.duplicates == 1

    def test_single_ping_gives_no_trip(self):
        assert extract_trips(BikeHistory("b", [Ping("b", T0, GeoPoint(1.4, 103.8))])) == []

    def test_extract_all_order(self):
        p1, q1 = ping_pair(600, 1000, bike="z", t0=T0)
        p2, q2 = ping_pair(600, 1000, bike="a", t0=T0)
        trips = extract_all(build_histories([p1, q1, p2, q2]))
        assert [tr.bike_id for tr in trips] == ["a", "z"]


class TestIdle:
    def test_intervals(self):
        day = 86400
        p, q = ping_pair(600, 1000, t0=T0 + 8 * day)
        trips = extract_trips(BikeHistory("b", [p, q]))
        gaps = idle_intervals(trips, (T0, T0 + 10 * day))
        assert gaps == [(T0, T0 + 8 * day)]

    def test_usage_stats(self):
        p, q = ping_pair(600, 1000, bike="a")
        lone = Ping("c", T0, GeoPoint(1.4, 103.8))
        late = Ping("c", T0 + 9 * 86400, GeoPoint(1.4, 103.8))
        stats = usage_stats(build_histories([p, q, lone, late]))
        assert stats.trips_per_bike == {"a": 1, "c": 0}
        assert stats.histogram() == {0: 1, 1: 1}
        assert "c" in stats.idle_bike_ids


def test_trips_csv_round_trip():
    p, q = ping_pair(600, 1000)
    trips = extract_trips(BikeHistory("b1", [p, q]))
    trips = [trips[0].with_stations(2, 5)]
    buf = io.StringIO()
    write_trips(trips, buf, with_stations=True)
    back = read_trips(io.StringIO(buf.getvalue()))
    assert back[0].origin_station == 2 and back[0].dest_station == 5
    assert back[0].t_start == trips[0].t_start
    assert back[0].origin.lat == pytest.approx(trips[0].origin.lat, abs=1e-7)
