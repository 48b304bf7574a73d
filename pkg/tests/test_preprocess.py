from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from cycletrail.errors import EmptyTrack, MalformedGpx
from cycletrail.geo import GeoPoint, Waypoint, haversine_distance
from cycletrail.preprocess import (
    Boundary, PreprocessConfig, StationaryTrim, Trajectory, TripSegment, fix_timestamps,
    filter_bounds, filter_speed, format_timestamp, parse_gpx, parse_timestamp, preprocess,
    resample, split_on_gaps, trim_stationary_start, waypoints_from_rows, write_gpx,
)

from conftest import meridian_offset_deg, track

GPX_HEAD = b'<?xml version="1.0"?><gpx version="1.1" xmlns="http://www.topografix.com/GPX/1/1"><trk><trkseg>'
GPX_TAIL = b"</trkseg></trk></gpx>"
LONDON = Boundary.from_bbox(-0.6, 51.2, 0.4, 51.8)


def gpx(*pts: bytes) -> bytes:
    return GPX_HEAD + b"".join(pts) + GPX_TAIL


def trkpt(lat, lon, time=None) -> bytes:
    t = f"<time>{time}</time>" if time else ""
    return f'<trkpt lat="{lat}" lon="{lon}">{t}</trkpt>'.encode()


def traj(times, lat=51.5, lon=-0.1):
    return Trajectory("t", [Waypoint(GeoPoint(lat, lon), float(t), i) for i, t in enumerate(times)])


def moving(n: int, speed_ms: float = 5.0, t0: float = 0.0, dt: float = 1.0) -> Trajectory:
    return Trajectory("t", track([(i * speed_ms * dt, 0.0) for i in range(n)], t0, dt))


# --------------------------------------------------------------------------
# GPX


def test_parse_three_points_in_order():
    t = parse_gpx(gpx(
        trkpt(51.5, -0.1, "2024-05-01T10:00:00Z"),
        trkpt(51.5001, -0.1, "2024-05-01T10:00:01Z"),
        trkpt(51.5002, -0.1, "2024-05-01T10:00:02Z"),
    ), "ride")
    assert t.trip_id == "ride"
    assert [wp.lat for wp in t.points] == [51.5, 51.5001, 51.5002]
    assert t.times == [t.points[0].time + k for k in range(3)]
    assert [wp.source_index for wp in t.points] == [0, 1, 2]


def test_untimed_point_is_dropped_and_counted():
    t = parse_gpx(gpx(
        trkpt(51.5, -0.1, "2024-05-01T10:00:00Z"),
        trkpt(51.6, -0.1),
        trkpt(51.5002, -0.1, "2024-05-01T10:00:02Z"),
    ))
    assert [wp.lat for wp in t.points] == [51.5, 51.5002]
    assert [wp.source_index for wp in t.points] == [0, 2]
    assert t.untimed_dropped == 1


def test_gpx_1_0_namespace():
    data = (b'<gpx version="1.0" xmlns="http://www.topografix.com/GPX/1/0"><trk><trkseg>'
            + trkpt(51.5, -0.1, "2024-05-01T10:00:00Z") + GPX_TAIL)
    assert len(parse_gpx(data)) == 1


@pytest.mark.parametrize("data", [
    GPX_HEAD + trkpt(51.5, -0.1, "2024-05-01T10:00:00Z"),  # truncated
    b"not xml at all",
    b"<kml></kml>",
    b'<gpx version="1.1"></gpx>',
])
def test_malformed(data):
    with pytest.raises(MalformedGpx):
        parse_gpx(data)


def test_no_usable_points():
    with pytest.raises(EmptyTrack):
        parse_gpx(gpx(trkpt(51.5, -0.1)))


@pytest.mark.parametrize("text, epoch", [
    ("1970-01-01T00:00:00Z", 0.0),
    ("1970-01-01T00:00:01.250Z", 1.25),
    ("1970-01-01T01:00:00+01:00", 0.0),
    ("1970-01-01T00:00:10", 10.0),
])
def test_parse_timestamp(text, epoch):
    assert parse_timestamp(text) == pytest.approx(epoch)


@given(st.integers(0, 4_000_000_000), st.integers(0, 999))
def test_timestamp_round_trip(sec, ms):
    t = sec + ms / 1000
    assert parse_timestamp(format_timestamp(t)) == pytest.approx(t, abs=1e-6)


def test_write_gpx_round_trip():
    seg = TripSegment("ride", 2, track([(i * 3.0, i * 1.0) for i in range(5)], t0=1_700_000_000))
    back = parse_gpx(write_gpx(seg), "ride")
    assert [(w.lat, w.lon, w.time) for w in back.points] == [(w.lat, w.lon, w.time) for w in seg.points]


# --------------------------------------------------------------------------
# fix_timestamps


@pytest.mark.parametrize("times, kept", [
    ([0, 1, 1, 2], [0, 1, 3]),
    ([0, 5, 3, 6], [0, 1, 3]),
    ([0, 1, 2, 3], [0, 1, 2, 3]),
])
def test_fix_timestamps(times, kept):
    assert [wp.source_index for wp in fix_timestamps(traj(times)).points] == kept


@given(st.lists(st.integers(0, 50), max_size=40))
def test_fix_timestamps_strict_and_idempotent(times):
    once = fix_timestamps(traj(times))
    assert all(b > a for a, b in zip(once.times, once.times[1:]))
    assert fix_timestamps(once).points == once.points


# --------------------------------------------------------------------------
# filter_bounds


def test_bounds_inside_unchanged():
    t = traj([0, 1, 2])
    assert filter_bounds(t, LONDON).points == t.points


def test_bounds_drops_far_point():
    t = Trajectory("t", [
        Waypoint(GeoPoint(51.5, -0.1), 0.0, 0),
        Waypoint(GeoPoint(51.5, 10.0), 1.0, 1),
        Waypoint(GeoPoint(51.5, -0.1), 2.0, 2),
    ])
    assert [wp.source_index for wp in filter_bounds(t, LONDON).points] == [0, 2]


@pytest.mark.parametrize("lat, lon", [(51.2, -0.6), (51.8, 0.4), (51.5, -0.6), (51.2, 0.0)])
def test_bounds_edge_and_vertex_count_inside(lat, lon):
    assert LONDON.contains(lat, lon)


def test_bounds_none_is_identity():
    t = traj([0, 1])
    assert filter_bounds(t, None) is t


def test_boundary_with_hole():
    outer = [(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]
    hole = [(4, 4), (6, 4), (6, 6), (4, 6), (4, 4)]
    b = Boundary([outer, hole])
    assert b.contains(2, 2) and not b.contains(5, 5) and b.contains(4, 5)


@pytest.mark.parametrize("ring", [
    [(0, 0), (1, 0), (1, 1), (0, 1)],  # not closed
    [(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)],  # bow tie
    [(0, 0), (1, 0), (0, 0)],
])
def test_boundary_rejects_bad_rings(ring):
    with pytest.raises(ValueError):
        Boundary([ring])


def test_boundary_from_geojson_feature():
    b = Boundary.from_geojson({"type": "Feature", "geometry": {
        "type": "Polygon", "coordinates": [[[0, 0], [2, 0], [2, 2], [0, 2], [0, 0]]]}})
    assert b.contains(1, 1) and not b.contains(3, 1)


# --------------------------------------------------------------------------
# filter_speed


def test_constant_20kmh_unchanged():
    t = moving(30, 20 / 3.6)
    assert filter_speed(t, 50).points == t.points


def test_teleport_dropped_neighbours_kept():
    pts = track([(0, 0), (5, 0), (10, 0), (10 + 200 / 3.6, 0), (15, 0), (20, 0)])
    pts[3] = Waypoint(pts[3].point, pts[3].time, 3)
    # point 3 sits 55.6 m past point 2 after 1 s: 200 km/h
    out = filter_speed(Trajectory("t", pts), 50)
    assert [wp.source_index for wp in out.points] == [0, 1, 2, 4, 5]


def test_exactly_at_limit_is_kept():
    a = Waypoint(GeoPoint(51.5, 0.0), 0.0, 0)
    b = Waypoint(GeoPoint(51.5 + meridian_offset_deg(50 / 3.6 * 2), 0.0), 2.0, 1)
    assert haversine_distance(a.point, b.point) / 2 * 3.6 == pytest.approx(50.0, rel=1e-9)
    assert len(filter_speed(Trajectory("t", [a, b]), 50)) == 2
    # measured a hair above 50 purely through round-off: still "not exceeding"
    limit = haversine_distance(a.point, b.point) / 2 * 3.6 * (1 - 1e-12)
    assert len(filter_speed(Trajectory("t", [a, b]), limit)) == 2


def test_just_over_limit_is_dropped():
    a = Waypoint(GeoPoint(51.5, 0.0), 0.0, 0)
    b = Waypoint(GeoPoint(51.5 + meridian_offset_deg(50.01 / 3.6), 0.0), 1.0, 1)
    assert len(filter_speed(Trajectory("t", [a, b]), 50)) == 1


# --------------------------------------------------------------------------
# trim_stationary_start


def leading_still_count(t: Trajectory, threshold: float) -> int:
    """Direct scan: leading points whose speed to the next point is below threshold."""
    n = 0
    for a, b in zip(t.points, t.points[1:]):
        if haversine_distance(a.point, b.point) / (b.time - a.time) < threshold:
            n += 1
        else:
            break
    return n


def test_thirty_still_seconds_trimmed():
    pts = [(0.0, 0.0)] * 31 + [(5.0 * k, 0.0) for k in range(1, 20)]
    t = Trajectory("t", track(pts))
    expected = leading_still_count(t, 0.3)
    assert expected == 30
    out = trim_stationary_start(t)
    assert len(t) - len(out) == 30
    assert out.points[0] is t.points[30]


def test_moving_start_unchanged():
    t = moving(10)
    assert trim_stationary_start(t).points == t.points


def test_all_still_keeps_one():
    t = Trajectory("t", track([(0.0, 0.0)] * 10))
    assert len(trim_stationary_start(t)) == 1


def test_trim_threshold_configurable():
    t = moving(10, speed_ms=0.5)
    assert len(trim_stationary_start(t, StationaryTrim(1.0))) == 1
    assert len(trim_stationary_start(t, StationaryTrim(0.3))) == 10


# --------------------------------------------------------------------------
# resample


def test_fill_five_second_gap():
    t = Trajectory("t", track([(0, 0), (50, 0)], dt=5.0))
    out = resample(t)
    assert out.times == [0, 1, 2, 3, 4, 5]
    xs = [haversine_distance(t.points[0].point, wp.point) for wp in out.points]
    assert xs == pytest.approx([0, 10, 20, 30, 40, 50], abs=1e-6)


def test_interpolated_midpoint_on_equator():
    t = Trajectory("t", [Waypoint(GeoPoint(0, 0), 0.0, 0), Waypoint(GeoPoint(0, 0.0004), 4.0, 1)])
    mid = resample(t).points[2]
    assert mid.time == 2 and (mid.lat, mid.lon) == pytest.approx((0.0, 0.0002), abs=1e-15)


def test_ten_hz_burst_nearest_point_per_second():
    times = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.95, 1.05, 1.6, 2.0]
    t = Trajectory("t", [Waypoint(GeoPoint(51.5, -0.1 + i * 1e-5), tm, i) for i, tm in enumerate(times)])
    out = resample(t)
    assert out.times == [0.0, 1.0, 2.0]
    assert [wp.source_index for wp in out.points] == [0, 9, 12]


def test_long_gap_left_empty():
    t = Trajectory("t", track([(0, 0), (5, 0), (6, 0), (7, 0)], dt=1.0))
    t.points[2:] = [Waypoint(w.point, w.time + 100, w.source_index) for w in t.points[2:]]
    assert resample(t).times == [0, 1, 102, 103]


def test_sixty_second_gap_is_filled():
    t = traj([0, 60])
    assert len(resample(t)) == 61


fractional_times = st.lists(st.floats(0, 500, allow_nan=False), min_size=1, max_size=30).map(
    lambda ts: sorted(set(ts)))


@given(fractional_times)
def test_resample_stays_inside_input_span(times):
    t = traj(times)
    out = resample(t)
    assert all(times[0] <= tm <= times[-1] for tm in out.times)
    assert all(tm == int(tm) for tm in out.times)
    assert all(b > a for a, b in zip(out.times, out.times[1:]))


@given(fractional_times)
def test_point_count_bounded_by_duration(times):
    for seg in split_on_gaps(resample(traj(times))):
        duration = seg.points[-1].time - seg.points[0].time
        assert len(seg) <= math.ceil(duration) + 1


# --------------------------------------------------------------------------
# split_on_gaps


@pytest.mark.parametrize("times, n", [
    ([0, 1, 62, 63], 2),
    ([0, 1, 61, 62], 1),
    ([0, 100, 200, 300], 4),
])
def test_split_on_gaps(times, n):
    segs = split_on_gaps(traj(times))
    assert len(segs) == n
    assert [s.segment_index for s in segs] == list(range(n))


def test_short_segments_discarded_and_indices_compact():
    t = traj(list(range(5)) + list(range(100, 102)) + list(range(200, 206)))
    segs = split_on_gaps(t, 60, min_points=3)
    assert [len(s) for s in segs] == [5, 6]
    assert [s.segment_index for s in segs] == [0, 1]
    assert segs[1].key == "t_1"


# --------------------------------------------------------------------------
# full chain


def test_clean_trace_one_segment_zero_drops():
    t = moving(150)
    segs, report = preprocess(t, PreprocessConfig(boundary=LONDON))
    assert len(segs) == 1 and len(segs[0]) == 150
    assert all(s.dropped == 0 for s in report.stages)
    assert report.splits == 0


def test_hundred_second_gap_splits_once():
    pts = track([(i * 5.0, 0.0) for i in range(300)])
    pts = pts[:150] + [Waypoint(w.point, w.time + 100, w.source_index) for w in pts[150:]]
    segs, report = preprocess(Trajectory("t", pts))
    assert [len(s) for s in segs] == [150, 150]
    assert report.splits == 1


def test_report_conserves_points():
    pts = track([(i * 5.0, 0.0) for i in range(200)])
    pts.insert(50, Waypoint(pts[49].point, pts[49].time, 999))  # duplicate time
    pts[80] = Waypoint(GeoPoint(51.5, 5.0), pts[80].time, 80)  # out of bounds
    segs, report = preprocess(Trajectory("t", pts), PreprocessConfig(boundary=LONDON, min_points=10))
    for s in report.stages:
        assert s.points_in >= 0 and s.points_out >= 0
    chain = report.stages
    assert all(a.points_out == b.points_in for a, b in zip(chain, chain[1:]))
    assert chain[-1].points_out == sum(len(s) for s in segs)
    d = report.as_dict()
    assert d["stages"][0]["dropped"] == 1 and d["stages"][1]["dropped"] == 1


def test_config_rejects_non_positive():
    with pytest.raises(ValueError):
        PreprocessConfig(max_speed_kmh=0)
    with pytest.raises(ValueError):
        StationaryTrim(0)


def test_waypoints_from_rows():
    wps = waypoints_from_rows([(51.5, -0.1, 0.0), (51.6, -0.1, 1.0)])
    assert [w.source_index for w in wps] == [0, 1] and wps[1].lat == 51.6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-300, 300), st.floats(-300, 300), st.integers(0, 3)), min_size=2, max_size=60))
def test_chain_postconditions(steps):
    times, pts, t = [], [], 0
    for x, y, dt in steps:
        t += dt
        pts.append((x, y))
        times.append(t)
    raw = track(pts)
    raw = [Waypoint(w.point, float(tm), w.source_index) for w, tm in zip(raw, times)]
    segs, _ = preprocess(Trajectory("t", raw), PreprocessConfig(min_points=1))
    limit = 50 / 3.6 * (1 + 1e-9)
    for seg in segs:
        ts = [w.time for w in seg.points]
        assert all(b - a == 1.0 for a, b in zip(ts, ts[1:]))
        for a, b in zip(seg.points, seg.points[1:]):
            assert haversine_distance(a.point, b.point) <= limit


def test_fill_along_north_edge_stays_inside():
    box = Boundary.from_bbox(-0.2, 51.45, -0.04, 51.55)
    a = Waypoint(GeoPoint(51.55, -0.15), 0.0, 0)
    b = Waypoint(GeoPoint(51.55, -0.1395), 50.0, 1)  # about 13.9 m/s due east on the edge
    out = resample(Trajectory("t", [a, b]), boundary=box)
    assert out.times == [float(s) for s in range(51)]
    assert all(box.contains(w.lat, w.lon) for w in out.points)
    pair = haversine_distance(a.point, b.point) / 50
    for p, q in zip(out.points, out.points[1:]):
        assert haversine_distance(p.point, q.point) <= pair * (1 + 1e-9)
    # without the boundary the great circle is used and leaves the box
    free = resample(Trajectory("t", [a, b]))
    assert not all(box.contains(w.lat, w.lon) for w in free.points)
