"""GPX ingestion and rule-based cleaning of raw traces.

The cleaning chain runs in a fixed order so that every speed is computed on
repaired timestamps:

    fix_timestamps -> filter_bounds -> filter_speed -> trim_stationary_start
    -> resample -> split_on_gaps
"""

from __future__ import annotations

import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

from .errors import EmptyTrack, MalformedGpx
from .geo import (
    GeoPoint, Waypoint, haversine_distance, interpolate_along_line, interpolate_great_circle,
)

log = logging.getLogger(__name__)


@dataclass
class Trajectory:
    trip_id: str
    points: list[Waypoint]
    # trkpts skipped while parsing (no <time> or unusable coordinates)
    untimed_dropped: int = 0

    def __len__(self):
        return len(self.points)

    def with_points(self, points: list[Waypoint]) -> "Trajectory":
        return Trajectory(self.trip_id, points, self.untimed_dropped)

    @property
    def times(self) -> list[float]:
        return [p.time for p in self.points]


@dataclass
class TripSegment:
    trip_id: str
    segment_index: int
    points: list[Waypoint]

    @property
    def key(self) -> str:
        return f"{self.trip_id}_{self.segment_index}"

    def __len__(self):
        return len(self.points)


# --------------------------------------------------------------------------
# study-area boundary


def _on_segment(px, py, ax, ay, bx, by, eps=1e-12) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    return (
        min(ax, bx) - eps <= px <= max(ax, bx) + eps
        and min(ay, by) - eps <= py <= max(ay, by) + eps
    )


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and _on_segment(*p3, *p1, *p2))
        or (o2 == 0 and _on_segment(*p4, *p1, *p2))
        or (o3 == 0 and _on_segment(*p1, *p3, *p4))
        or (o4 == 0 and _on_segment(*p2, *p3, *p4))
    )


class Boundary:
    """Polygon study area as a set of closed (lon, lat) rings.

    Containment follows the even-odd rule across all rings, so inner rings act
    as holes. Points on an edge or vertex count as inside.
    """

    def __init__(self, rings: Sequence[Sequence[tuple[float, float]]]):
        if not rings:
            raise ValueError("boundary needs at least one ring")
        self.rings: list[list[tuple[float, float]]] = []
        for ring in rings:
            ring = [(float(x), float(y)) for x, y in ring]
            if len(ring) < 4 or ring[0] != ring[-1]:
                raise ValueError("boundary ring must be closed with at least 3 distinct vertices")
            self._check_simple(ring)
            self.rings.append(ring)
        xs = [x for r in self.rings for x, _ in r]
        ys = [y for r in self.rings for _, y in r]
        self.bbox = (min(xs), min(ys), max(xs), max(ys))

    @staticmethod
    def _check_simple(ring):
        edges = list(zip(ring[:-1], ring[1:]))
        n = len(edges)
        for i in range(n):
            for j in range(i + 1, n):
                # neighbours share a vertex by construction
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(*edges[i], *edges[j]):
                    raise ValueError(f"boundary ring self-intersects at edges {i} and {j}")

    @classmethod
    def from_bbox(cls, min_lon, min_lat, max_lon, max_lat) -> "Boundary":
        return cls([[
            (min_lon, min_lat), (max_lon, min_lat), (max_lon, max_lat),
            (min_lon, max_lat), (min_lon, min_lat),
        ]])

    @classmethod
    def from_geojson(cls, obj: dict) -> "Boundary":
        """Accept a Polygon/MultiPolygon geometry, Feature or FeatureCollection."""
        kind = obj.get("type")
        if kind == "FeatureCollection":
            rings = []
            for feat in obj["features"]:
                rings.extend(cls.from_geojson(feat).rings)
            return cls(rings)
        if kind == "Feature":
            return cls.from_geojson(obj["geometry"])
        if kind == "Polygon":
            return cls([[tuple(c[:2]) for c in ring] for ring in obj["coordinates"]])
        if kind == "MultiPolygon":
            return cls([[tuple(c[:2]) for c in ring] for poly in obj["coordinates"] for ring in poly])
        raise ValueError(f"unsupported boundary geometry {kind!r}")

    def contains(self, lat: float, lon: float) -> bool:
        x, y = lon, lat
        min_x, min_y, max_x, max_y = self.bbox
        if x < min_x or x > max_x or y < min_y or y > max_y:
            return False
        inside = False
        for ring in self.rings:
            for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
                if _on_segment(x, y, ax, ay, bx, by):
                    return True
                if (ay > y) != (by > y):
                    xi = ax + (y - ay) * (bx - ax) / (by - ay)
                    if x < xi:
                        inside = not inside
        return inside


# --------------------------------------------------------------------------
# configuration


@dataclass
class StationaryTrim:
    # leading points are dropped while the speed to the next fix stays below this
    speed_ms: float = 0.3

    def __post_init__(self):
        if not self.speed_ms > 0:
            raise ValueError("stationary trim speed must be positive")


@dataclass
class PreprocessConfig:
    boundary: Boundary | None = None
    max_speed_kmh: float = 50.0
    gap_split_seconds: float = 60.0
    resample_hz: float = 1.0
    min_points: int = 120
    stationary_trim: StationaryTrim = field(default_factory=StationaryTrim)

    def __post_init__(self):
        for name in ("max_speed_kmh", "gap_split_seconds", "resample_hz", "min_points"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


# --------------------------------------------------------------------------
# GPX


_FRACTION = re.compile(r"(\.\d+)")


def parse_timestamp(text: str) -> float:
    """ISO-8601 to epoch seconds. Naive times are taken as UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    m = _FRACTION.search(s)
    frac = 0.0
    if m:
        frac = float(m.group(1))
        s = s[: m.start()] + s[m.end():]
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp() + frac


def format_timestamp(t: float) -> str:
    whole = math.floor(t)
    frac = t - whole
    base = datetime.fromtimestamp(whole, timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    if frac:
        base += f"{frac:.6f}"[1:].rstrip("0")
    return base + "Z"


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def parse_gpx(data: bytes, trip_id: str = "trip") -> Trajectory:
    """Read every ``trkpt`` of a GPX 1.0/1.1 document in document order.

    Points without a ``<time>`` are skipped and counted in
    ``Trajectory.untimed_dropped``.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedGpx(f"{trip_id}: not well-formed XML ({exc})") from exc
    if _local(root.tag) != "gpx":
        raise MalformedGpx(f"{trip_id}: root element is <{_local(root.tag)}>, expected <gpx>")
    tracks = [el for el in root if _local(el.tag) == "trk"]
    if not tracks:
        raise MalformedGpx(f"{trip_id}: no <trk> element")

    points: list[Waypoint] = []
    skipped = 0
    ordinal = 0
    for trk in tracks:
        for el in trk.iter():
            if _local(el.tag) != "trkpt":
                continue
            idx = ordinal
            ordinal += 1
            time_el = next((c for c in el if _local(c.tag) == "time"), None)
            try:
                pt = GeoPoint(float(el.attrib["lat"]), float(el.attrib["lon"]))
                if time_el is None or not (time_el.text or "").strip():
                    raise ValueError("missing time")
                t = parse_timestamp(time_el.text)
            except (KeyError, ValueError):
                skipped += 1
                continue
            points.append(Waypoint(pt, t, idx))
    if skipped:
        log.warning("%s: skipped %d trkpt(s) without usable time/coordinates", trip_id, skipped)
    if not points:
        raise EmptyTrack(f"{trip_id}: no usable track points")
    return Trajectory(trip_id, points, skipped)


def write_gpx(seg: TripSegment, creator: str = "cycletrail") -> bytes:
    root = ET.Element(
        "gpx",
        {"version": "1.1", "creator": creator, "xmlns": "http://www.topografix.com/GPX/1/1"},
    )
    trk = ET.SubElement(root, "trk")
    ET.SubElement(trk, "name").text = seg.key
    trkseg = ET.SubElement(trk, "trkseg")
    for wp in seg.points:
        el = ET.SubElement(trkseg, "trkpt", {"lat": repr(wp.lat), "lon": repr(wp.lon)})
        ET.SubElement(el, "time").text = format_timestamp(wp.time)
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


# --------------------------------------------------------------------------
# cleaning steps


def fix_timestamps(t: Trajectory) -> Trajectory:
    kept: list[Waypoint] = []
    for wp in t.points:
        if not kept or wp.time > kept[-1].time:
            kept.append(wp)
    return t.with_points(kept)


def filter_bounds(t: Trajectory, boundary: Boundary | None) -> Trajectory:
    if boundary is None:
        return t
    return t.with_points([wp for wp in t.points if boundary.contains(wp.lat, wp.lon)])


# Relative slack so that a pair at exactly the limit survives float round-off.
_SPEED_EPS = 1e-9


def filter_speed(t: Trajectory, max_speed_kmh: float = 50.0) -> Trajectory:
    """Greedy forward pass; a point too fast from the last kept point is dropped."""
    limit = max_speed_kmh / 3.6 * (1 + _SPEED_EPS)
    kept: list[Waypoint] = []
    for wp in t.points:
        if kept:
            prev = kept[-1]
            dt = wp.time - prev.time
            if dt <= 0:
                # timestamps must be repaired first
                raise ValueError("filter_speed needs strictly increasing times")
            if haversine_distance(prev.point, wp.point) / dt > limit:
                continue
        kept.append(wp)
    return t.with_points(kept)


def trim_stationary_start(t: Trajectory, cfg: StationaryTrim | None = None) -> Trajectory:
    """Drop the leading points from which the rider does not move.

    Point ``i`` is dropped while the speed from ``i`` to ``i + 1`` is below the
    threshold; the point where movement starts becomes the new first point. A
    trace that never moves keeps only its last point.
    """
    cfg = cfg or StationaryTrim()
    pts = t.points
    start = 0
    while start + 1 < len(pts):
        a, b = pts[start], pts[start + 1]
        if haversine_distance(a.point, b.point) / (b.time - a.time) >= cfg.speed_ms:
            break
        start += 1
    if start and start == len(pts) - 1:
        log.warning("%s: trace is stationary throughout; one point kept", t.trip_id)
    return t.with_points(pts[start:])


def _gap_fill(a: Waypoint, b: Waypoint, instants: list[float],
              boundary: Boundary | None) -> list[GeoPoint]:
    """Positions at ``instants`` strictly between two fixes, at constant ground speed.

    The great circle is used unless one of its points would fall outside the
    boundary (it bulges poleward of a parallel edge); then the straight
    lat/lon line, which cannot leave a convex boundary, is used instead.
    """
    dt = b.time - a.time
    fs = [(g - a.time) / dt for g in instants]
    pts = [interpolate_great_circle(a.point, b.point, f) for f in fs]
    if boundary is not None and not all(boundary.contains(p.lat, p.lon) for p in pts):
        pts = [interpolate_along_line(a.point, b.point, f) for f in fs]
    return pts


def resample(t: Trajectory, hz: float = 1.0, max_fill_seconds: float = 60.0,
             boundary: Boundary | None = None) -> Trajectory:
    """Put the trace on a regular time grid.

    Grid instants run from ``ceil(first)`` to ``floor(last)`` in steps of
    ``1/hz``. An instant that coincides with a fix takes it; inside an
    interval shorter than one step the nearer fix is used; intervals up to
    ``max_fill_seconds`` are filled at constant speed (see :func:`_gap_fill`);
    longer intervals are left empty for :func:`split_on_gaps`.
    """
    pts = t.points
    if not pts:
        return t.with_points([])
    step = 1.0 / hz
    k = math.ceil(pts[0].time * hz)
    k_end = math.floor(pts[-1].time * hz)
    out: list[Waypoint] = []
    i = 0
    n = len(pts)
    while k <= k_end:
        g = k / hz
        while i + 1 < n and pts[i + 1].time <= g:
            i += 1
        a = pts[i]
        if a.time == g or i + 1 >= n:
            out.append(Waypoint(a.point, g, a.source_index))
            k += 1
            continue
        b = pts[i + 1]
        dt = b.time - a.time
        if dt < step:
            near = a if g - a.time <= b.time - g else b
            out.append(Waypoint(near.point, g, near.source_index))
            k += 1
        elif dt <= max_fill_seconds:
            k_b = math.ceil(b.time * hz)
            instants = [j / hz for j in range(k, min(k_b, k_end + 1)) if j / hz < b.time]
            for g, p in zip(instants, _gap_fill(a, b, instants, boundary)):
                src = a.source_index if g - a.time <= b.time - g else b.source_index
                out.append(Waypoint(p, g, src))
            k += len(instants)
        else:
            k = math.ceil(b.time * hz)
    return t.with_points(out)


def split_on_gaps(
    t: Trajectory, gap_split_seconds: float = 60.0, min_points: int = 1
) -> list[TripSegment]:
    pieces: list[list[Waypoint]] = []
    for wp in t.points:
        if not pieces or wp.time - pieces[-1][-1].time > gap_split_seconds:
            pieces.append([])
        pieces[-1].append(wp)
    kept = [p for p in pieces if len(p) >= min_points]
    return [TripSegment(t.trip_id, i, p) for i, p in enumerate(kept)]


# --------------------------------------------------------------------------
# full chain


@dataclass
class StageCount:
    stage: str
    points_in: int
    points_out: int

    @property
    def dropped(self) -> int:
        return self.points_in - self.points_out


@dataclass
class PreprocessReport:
    trip_id: str
    raw_points: int
    untimed_dropped: int
    stages: list[StageCount] = field(default_factory=list)
    splits: int = 0
    short_segments: int = 0
    stationary_only: bool = False

    def as_dict(self) -> dict:
        return {
            "trip_id": self.trip_id,
            "raw_points": self.raw_points,
            "untimed_dropped": self.untimed_dropped,
            "stages": [
                {"stage": s.stage, "points_in": s.points_in, "points_out": s.points_out,
                 "dropped": s.dropped}
                for s in self.stages
            ],
            "splits": self.splits,
            "short_segments": self.short_segments,
            "stationary_only": self.stationary_only,
        }


def preprocess(
    t: Trajectory, cfg: PreprocessConfig | None = None
) -> tuple[list[TripSegment], PreprocessReport]:
    cfg = cfg or PreprocessConfig()
    report = PreprocessReport(t.trip_id, len(t.points) + t.untimed_dropped, t.untimed_dropped)

    def run(name, fn, traj):
        out = fn(traj)
        report.stages.append(StageCount(name, len(traj), len(out)))
        return out

    cur = run("fix_timestamps", fix_timestamps, t)
    cur = run("filter_bounds", lambda x: filter_bounds(x, cfg.boundary), cur)
    cur = run("filter_speed", lambda x: filter_speed(x, cfg.max_speed_kmh), cur)
    before = len(cur)
    cur = run("trim_stationary_start", lambda x: trim_stationary_start(x, cfg.stationary_trim), cur)
    report.stationary_only = before > 1 and len(cur) == 1
    cur = run(
        "resample",
        lambda x: resample(x, cfg.resample_hz, cfg.gap_split_seconds, cfg.boundary),
        cur,
    )
    all_pieces = split_on_gaps(cur, cfg.gap_split_seconds, 1)
    segments = split_on_gaps(cur, cfg.gap_split_seconds, cfg.min_points)
    report.splits = max(0, len(all_pieces) - 1)
    report.short_segments = len(all_pieces) - len(segments)
    report.stages.append(
        StageCount("split_on_gaps", len(cur), sum(len(s) for s in segments))
    )
    return segments, report


def waypoints_from_rows(rows: Iterable[tuple[float, float, float]]) -> list[Waypoint]:
    """Build waypoints from (lat, lon, time) tuples, numbering them in order."""
    return [Waypoint(GeoPoint(lat, lon), t, i) for i, (lat, lon, t) in enumerate(rows)]
