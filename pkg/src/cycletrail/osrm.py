"""OSRM match API v5: request building, response parsing, HTTP client.

The built-in matcher also serializes its result in this response shape (with
a few extra keys on tracepoints and legs) so every stage downstream of
matching reads a single format regardless of backend.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import urllib.error
import urllib.parse
import urllib.request
from pathlib import Path
from typing import Sequence

from .errors import ParseError, RemoteRejected, RemoteUnavailable
from .geo import GeoPoint, haversine_distance
from .matcher import MatchedLeg, MatchedPoint, MatchedTrip
from .network import RoadNetwork
from .preprocess import TripSegment

log = logging.getLogger(__name__)


def build_match_url(base_url: str, points: Sequence[GeoPoint], times: Sequence[float] | None = None,
                    profile: str = "bike", radiuses: Sequence[float] | None = None) -> str:
    coords = ";".join(f"{p.lon:.6f},{p.lat:.6f}" for p in points)
    params = [("annotations", "true"), ("overview", "full"), ("geometries", "geojson")]
    if times is not None:
        params.insert(0, ("timestamps", ";".join(str(int(round(t))) for t in times)))
    if radiuses is not None:
        params.append(("radiuses", ";".join(f"{r:g}" for r in radiuses)))
    query = urllib.parse.urlencode(params, safe=";,")
    return f"{base_url.rstrip('/')}/match/v1/{profile}/{coords}?{query}"


# --------------------------------------------------------------------------
# response <-> MatchedTrip


def _resolve_way(net: RoadNetwork | None, nodes: Sequence[int], loc: GeoPoint, head: bool):
    """(way_id, arc_id, arc_offset, way_offset) from the segment a point sits on."""
    if net is None or len(nodes) < 2:
        return None, None, 0.0, 0.0
    u, v = (nodes[0], nodes[1]) if head else (nodes[-2], nodes[-1])
    hit = net.segment_arc.get((u, v))
    if hit is None:
        return None, None, 0.0, 0.0
    cand = net.project(loc, hit[0])
    arc = net.arcs[hit[0]]
    return arc.way_id, arc.arc_id, cand.offset_m, arc.way_offset(cand.offset_m)


def parse_match_response(doc: dict, trip_id: str, segment_index: int,
                         times: Sequence[float] | None = None,
                         observations: Sequence[GeoPoint] | None = None,
                         net: RoadNetwork | None = None, seq_offset: int = 0) -> MatchedTrip:
    """Turn an OSRM match response into a MatchedTrip.

    Only the matching with the most tracepoints is kept; fixes that are null
    or belong to another matching are reported as discarded. A ``NoMatch``
    code yields a trip with every fix discarded.
    """
    try:
        code = doc["code"]
        if code == "NoMatch":
            n = len(doc.get("tracepoints") or times or observations or [])
            return MatchedTrip(trip_id, segment_index, [], [], [seq_offset + i for i in range(n)])
        if code != "Ok":
            raise RemoteRejected(f"match service answered {code}: {doc.get('message', '')}")
        tracepoints = doc["tracepoints"]
        matchings = doc["matchings"]
        by_matching: dict[int, list[tuple[int, int]]] = {}
        for i, tp in enumerate(tracepoints):
            if tp is not None:
                by_matching.setdefault(int(tp["matchings_index"]), []).append((int(tp["waypoint_index"]), i))
        if not by_matching:
            return MatchedTrip(trip_id, segment_index, [], [], [seq_offset + i for i in range(len(tracepoints))])
        best = max(sorted(by_matching), key=lambda m: len(by_matching[m]))
        members = sorted(by_matching[best])
        legs_doc = matchings[best]["legs"]
        if len(legs_doc) != len(members) - 1:
            raise ParseError(f"matching {best}: {len(legs_doc)} legs for {len(members)} waypoints")

        keep = {i for _, i in members}
        discarded = [seq_offset + i for i in range(len(tracepoints)) if i not in keep]
        points: list[MatchedPoint] = []
        for k, (_, i) in enumerate(members):
            tp = tracepoints[i]
            lon, lat = tp["location"]
            loc = GeoPoint(float(lat), float(lon))
            t = tp.get("time")
            if t is None:
                if times is None:
                    raise ParseError("tracepoint without time and no timestamps supplied")
                t = times[i]
            if "way_id" in tp:
                way_id, arc_id = tp["way_id"], tp.get("arc_id")
                arc_off, way_off = float(tp["arc_offset_m"]), float(tp["offset_m"])
            else:
                if k < len(legs_doc):
                    nodes, head = legs_doc[k].get("annotation", {}).get("nodes", []), True
                else:
                    nodes, head = legs_doc[k - 1].get("annotation", {}).get("nodes", []), False
                way_id, arc_id, arc_off, way_off = _resolve_way(net, nodes, loc, head)
            dist = tp.get("distance")
            if dist is None:
                dist = haversine_distance(observations[i], loc) if observations is not None else 0.0
            points.append(MatchedPoint(
                point_seq=int(tp.get("point_seq", seq_offset + i)), time=float(t), snapped=loc,
                way_id=way_id, arc_id=arc_id, arc_offset_m=arc_off, offset_m=way_off,
                emission_distance_m=float(dist),
            ))
        legs: list[MatchedLeg] = []
        for k, leg in enumerate(legs_doc):
            nodes = tuple(int(n) for n in leg.get("annotation", {}).get("nodes", []))
            inter = leg.get("intersections")
            if inter is None:
                inter = 0 if net is None else sum(1 for n in nodes[1:-1] if net.degree.get(n, 0) >= 3)
            pa, pb = points[k], points[k + 1]
            legs.append(MatchedLeg(
                pa.point_seq, pb.point_seq, nodes, float(leg["distance"]), pb.time - pa.time,
                int(inter), tuple(leg.get("arcs", ())),
            ))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"unexpected match response shape: {exc!r}") from exc
    return MatchedTrip(trip_id, segment_index, points, legs, discarded)


def to_match_response(mt: MatchedTrip, n_points: int, net: RoadNetwork | None = None) -> dict:
    """Serialize a MatchedTrip as an OSRM match response (plus extension keys)."""
    if not mt.points:
        return {"code": "NoMatch", "message": "no fix could be matched",
                "tracepoints": [None] * n_points, "matchings": []}
    tracepoints: list[dict | None] = [None] * n_points
    for k, p in enumerate(mt.points):
        name = ""
        if net is not None and p.way_id in net.ways:
            name = net.ways[p.way_id].tags.name or ""
        tracepoints[p.point_seq] = {
            "location": [p.snapped.lon, p.snapped.lat], "name": name,
            "distance": p.emission_distance_m, "matchings_index": 0, "waypoint_index": k,
            "alternatives_count": 0, "point_seq": p.point_seq, "time": p.time,
            "way_id": p.way_id, "arc_id": p.arc_id, "arc_offset_m": p.arc_offset_m,
            "offset_m": p.offset_m,
        }
    legs = [{
        "distance": leg.distance_m, "duration": leg.duration_s, "weight": leg.distance_m,
        "summary": "", "steps": [], "annotation": {"nodes": list(leg.node_sequence)},
        "intersections": leg.intersections, "arcs": list(leg.arcs),
    } for leg in mt.legs]
    coords = [[p.snapped.lon, p.snapped.lat] for p in mt.points]
    if net is not None:
        coords = matched_geometry(net, mt)
    return {
        "code": "Ok",
        "tracepoints": tracepoints,
        "matchings": [{
            "confidence": 1.0,
            "distance": sum(leg.distance_m for leg in mt.legs),
            "duration": sum(leg.duration_s for leg in mt.legs),
            "weight_name": "distance",
            "geometry": {"type": "LineString", "coordinates": coords},
            "legs": legs,
        }],
    }


def matched_geometry(net: RoadNetwork, mt: MatchedTrip) -> list[list[float]]:
    """[lon, lat] vertices of the matched path: anchors joined along the roads."""
    coords: list[list[float]] = []

    def add(p: GeoPoint):
        c = [p.lon, p.lat]
        if not coords or coords[-1] != c:
            coords.append(c)

    if not mt.points:
        return coords
    add(mt.points[0].snapped)
    for leg, pb in zip(mt.legs, mt.points[1:]):
        for nid in leg.node_sequence[1:-1]:
            if nid in net.nodes:
                add(net.nodes[nid].point)
        add(pb.snapped)
    return coords


# --------------------------------------------------------------------------
# client


class OsrmMatchClient:
    """HTTP client for an OSRM-compatible ``/match`` endpoint.

    Segments longer than ``max_points`` are sent in chunks that overlap by one
    fix; chunks are stitched on that shared fix. ``max_in_flight`` bounds
    concurrent requests across threads sharing the client.
    """

    def __init__(self, base_url: str = "http://localhost:5000", profile: str = "bike",
                 timeout: float = 30.0, max_points: int = 100, max_in_flight: int = 4):
        if max_points < 2:
            raise ValueError("max_points must be at least 2")
        self.base_url = base_url
        self.profile = profile
        self.timeout = timeout
        self.max_points = max_points
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _get(self, url: str) -> dict:
        with self._slots:
            try:
                with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                    body = resp.read()
            except urllib.error.HTTPError as exc:
                body = exc.read()
                try:
                    doc = json.loads(body)
                except ValueError:
                    raise RemoteRejected(f"HTTP {exc.code} from match service") from exc
                if doc.get("code") == "NoMatch":
                    return doc
                raise RemoteRejected(f"HTTP {exc.code}: {doc.get('code')} {doc.get('message', '')}") from exc
            except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
                raise RemoteUnavailable(f"match service at {self.base_url} unreachable: {exc}") from exc
        try:
            return json.loads(body)
        except ValueError as exc:
            raise ParseError(f"match service returned non-JSON body: {exc}") from exc

    def chunks(self, n: int) -> list[tuple[int, int]]:
        if n <= self.max_points:
            return [(0, n)]
        out, start = [], 0
        while start < n - 1:
            end = min(n, start + self.max_points)
            out.append((start, end))
            start = end - 1
        return out

    def match(self, seg: TripSegment, net: RoadNetwork | None = None,
              response_dir: str | Path | None = None) -> MatchedTrip:
        obs = [wp.point for wp in seg.points]
        times = [wp.time for wp in seg.points]
        raw: list[dict] = []
        merged: MatchedTrip | None = None
        broken_at = None
        for start, end in self.chunks(len(obs)):
            url = build_match_url(self.base_url, obs[start:end], times[start:end], self.profile)
            log.debug("match request %s (%d points)", seg.key, end - start)
            doc = self._get(url)
            raw.append(doc)
            piece = parse_match_response(doc, seg.trip_id, seg.segment_index, times[start:end],
                                         obs[start:end], net, seq_offset=start)
            if merged is None:
                merged = piece
                continue
            if broken_at is not None:
                continue
            if not merged.points:
                merged = MatchedTrip(seg.trip_id, seg.segment_index, piece.points, piece.legs,
                                     sorted(set(merged.discarded) | set(piece.discarded)))
            elif piece.points and piece.points[0].point_seq == start == merged.points[-1].point_seq:
                merged.points.extend(piece.points[1:])
                merged.legs.extend(piece.legs)
                merged.discarded = sorted(set(merged.discarded) | {d for d in piece.discarded if d != start})
            else:
                broken_at = start
        if broken_at is not None:
            log.warning("%s: chunks could not be joined at fix %d; rest discarded", seg.key, broken_at)
            kept = {p.point_seq for p in merged.points}
            merged.discarded = [i for i in range(len(obs)) if i not in kept]
        if response_dir is not None:
            save_match_document(Path(response_dir) / f"{seg.key}.json", merged, len(obs), net,
                                backend="remote", responses=raw)
        return merged


def remote_match(endpoint: str, seg: TripSegment, net: RoadNetwork | None = None,
                 response_dir: str | Path | None = None, **client_kw) -> MatchedTrip:
    return OsrmMatchClient(endpoint, **client_kw).match(seg, net, response_dir)


# --------------------------------------------------------------------------
# per-segment documents on disk


def save_match_document(path: Path, mt: MatchedTrip, n_points: int, net: RoadNetwork | None,
                        backend: str, responses: list[dict] | None = None) -> None:
    doc = {
        "trip_id": mt.trip_id,
        "segment_index": mt.segment_index,
        "backend": backend,
        "n_points": n_points,
        "match": to_match_response(mt, n_points, net),
    }
    if responses is not None:
        doc["responses"] = responses
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_match_document(path: Path, net: RoadNetwork | None = None) -> MatchedTrip:
    doc = json.loads(Path(path).read_text())
    return parse_match_response(doc["match"], doc["trip_id"], doc["segment_index"], net=net)
