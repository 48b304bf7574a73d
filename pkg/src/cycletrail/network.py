"""OSM road network: parsing, arc graph, spatial lookup and shortest paths.

Ways are cut into arcs at every node used by more than one way position, so
that arcs meet only at their endpoints. A two-way street slice yields one arc
per direction; a oneway slice yields a single arc. Offsets along an arc are in
meters from the arc's first node in its direction of travel.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import re
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import MalformedOsm, UnknownNode, Unreachable
from .geo import GeoPoint, LocalFrame, haversine_m, project_to_segment

log = logging.getLogger(__name__)

CYCLEWAY_VALUES = ("shared_lane", "share_busway", "track", "lane", "separate", "none")
_NO_CYCLEWAY = {"no", "none"}


# --------------------------------------------------------------------------
# tags


@dataclass(frozen=True)
class Maxspeed:
    value: float | None
    unit: str | None  # "mph", "km/h" or None when unparseable
    raw: str

    def __str__(self):
        return self.raw


_MAXSPEED = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(mph|km/h|kmh|kph)?\s*$", re.I)


def parse_maxspeed(raw: str | None) -> Maxspeed | None:
    """``"20 mph"`` -> (20, mph); a bare number is km/h as in OSM."""
    if raw is None or not raw.strip():
        return None
    m = _MAXSPEED.match(raw)
    if not m:
        return Maxspeed(None, None, raw)
    unit = (m.group(2) or "km/h").lower()
    return Maxspeed(float(m.group(1)), "mph" if unit == "mph" else "km/h", raw)


def normalize_cycleway(raw: str | None) -> str | None:
    if raw is None or not raw.strip():
        return None
    v = raw.strip()
    if v in _NO_CYCLEWAY:
        return "none"
    if v in CYCLEWAY_VALUES:
        return v
    return f"other:{v}"


def _parse_lanes(raw: str | None) -> int | None:
    if raw is None:
        return None
    try:
        return int(raw.strip())
    except ValueError:
        return None


@dataclass(frozen=True)
class WayTags:
    maxspeed: Maxspeed | None = None
    highway: str | None = None
    name: str | None = None
    ref: str | None = None
    lanes: int | None = None
    traffic_calming: str | None = None
    cycleway_left: str | None = None
    cycleway_right: str | None = None
    cycleway_both: str | None = None

    @classmethod
    def from_osm(cls, tags: Mapping[str, str]) -> "WayTags":
        both = tags.get("cycleway:both")
        if both is None:
            # untagged side means both sides in OSM
            both = tags.get("cycleway")
        return cls(
            maxspeed=parse_maxspeed(tags.get("maxspeed")),
            highway=tags.get("highway"),
            name=tags.get("name"),
            ref=tags.get("ref"),
            lanes=_parse_lanes(tags.get("lanes")),
            traffic_calming=tags.get("traffic_calming"),
            cycleway_left=normalize_cycleway(tags.get("cycleway:left")),
            cycleway_right=normalize_cycleway(tags.get("cycleway:right")),
            cycleway_both=normalize_cycleway(both),
        )


EMPTY_TAGS = WayTags()


@dataclass
class SignalFilter:
    """Which ``highway=traffic_signals`` nodes do not stop a cyclist.

    A node is excluded when any listed key is present with one of the listed
    values (``"*"`` matches any value).
    """

    exclude: dict[str, frozenset[str] | str] = field(
        default_factory=lambda: {
            "crossing": "*",
            "traffic_signals": frozenset({"crossing", "pedestrian_crossing", "cycle_crossing"}),
        }
    )

    def is_signal(self, tags: Mapping[str, str]) -> bool:
        if tags.get("highway") != "traffic_signals":
            return False
        for key, values in self.exclude.items():
            if key in tags and (values == "*" or tags[key] in values):
                return False
        return True


def _oneway(tags: Mapping[str, str]) -> tuple[bool, bool]:
    """(oneway, reversed) for bicycle traffic."""
    if tags.get("oneway:bicycle") == "no":
        return False, False
    v = tags.get("oneway", "")
    if v in ("yes", "true", "1"):
        return True, False
    if v in ("-1", "reverse"):
        return True, True
    if v == "" and (tags.get("junction") == "roundabout" or tags.get("highway") == "motorway"):
        return True, False
    return False, False


# --------------------------------------------------------------------------
# elements


@dataclass(frozen=True)
class RoadNode:
    node_id: int
    point: GeoPoint
    is_traffic_signal: bool = False


@dataclass(frozen=True)
class RoadWay:
    way_id: int
    node_ids: tuple[int, ...]
    tags: WayTags
    length_m: float
    oneway: bool = False
    oneway_reversed: bool = False
    raw_tags: Mapping[str, str] = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class Arc:
    arc_id: int
    way_id: int
    node_ids: tuple[int, ...]
    # cumulative distance at each node, cum[0] == 0, cum[-1] == length
    cum: tuple[float, ...]
    forward: bool  # travels in the way's node order
    way_offset0: float  # way-offset of node_ids[0]

    @property
    def length(self) -> float:
        return self.cum[-1]

    @property
    def start(self) -> int:
        return self.node_ids[0]

    @property
    def end(self) -> int:
        return self.node_ids[-1]

    def way_offset(self, offset: float) -> float:
        return self.way_offset0 + offset if self.forward else self.way_offset0 - offset

    def segment_at(self, offset: float) -> int:
        """Index i of the segment (node i -> i+1) containing ``offset``."""
        cum = self.cum
        lo, hi = 0, len(cum) - 2
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if cum[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo


@dataclass(frozen=True)
class Candidate:
    arc_id: int
    way_id: int
    point: GeoPoint
    offset_m: float
    distance_m: float


@dataclass(frozen=True)
class Anchor:
    arc_id: int
    offset_m: float


# --------------------------------------------------------------------------
# network


class RoadNetwork:
    """Immutable after construction; safe to share between threads."""

    CELL_M = 75.0

    def __init__(self, nodes: dict[int, RoadNode], ways: dict[int, RoadWay],
                 warnings: list[str] | None = None,
                 node_tags: dict[int, dict[str, str]] | None = None):
        self.nodes = nodes
        self.ways = ways
        self.warnings = list(warnings or [])
        self.node_tags = node_tags or {}
        self.arcs: list[Arc] = []
        self.out_arcs: dict[int, list[int]] = defaultdict(list)
        # directed vertex pair -> (arc_id, segment index within the arc)
        self.segment_arc: dict[tuple[int, int], tuple[int, int]] = {}
        self._node_ways: dict[int, list[int]] = defaultdict(list)
        self._build_arcs()
        self._build_index()

    # construction -------------------------------------------------------

    def _build_arcs(self):
        uses: dict[int, int] = defaultdict(int)
        for way in self.ways.values():
            for nid in way.node_ids:
                uses[nid] += 1
                if way.way_id not in self._node_ways[nid]:
                    self._node_ways[nid].append(way.way_id)
        neighbours: dict[int, set[int]] = defaultdict(set)
        for way in self.ways.values():
            ids = way.node_ids
            cuts = [0] + [i for i in range(1, len(ids) - 1) if uses[ids[i]] > 1] + [len(ids) - 1]
            way_cum = [0.0]
            for a, b in zip(ids[:-1], ids[1:]):
                pa, pb = self.nodes[a].point, self.nodes[b].point
                way_cum.append(way_cum[-1] + haversine_m(pa.lat, pa.lon, pb.lat, pb.lon))
            for i0, i1 in zip(cuts[:-1], cuts[1:]):
                sl = ids[i0:i1 + 1]
                cum = tuple(c - way_cum[i0] for c in way_cum[i0:i1 + 1])
                neighbours[sl[0]].add(sl[-1])
                neighbours[sl[-1]].add(sl[0])
                if not (way.oneway and way.oneway_reversed):
                    self._add_arc(way.way_id, sl, cum, True, way_cum[i0])
                if not (way.oneway and not way.oneway_reversed):
                    length = cum[-1]
                    rev_cum = tuple(length - c for c in reversed(cum))
                    self._add_arc(way.way_id, tuple(reversed(sl)), rev_cum, False, way_cum[i1])
        self.degree = {n: len(v) for n, v in neighbours.items()}

    def _add_arc(self, way_id, node_ids, cum, forward, way_offset0):
        arc = Arc(len(self.arcs), way_id, tuple(node_ids), tuple(cum), forward, way_offset0)
        self.arcs.append(arc)
        self.out_arcs[arc.start].append(arc.arc_id)
        for i, (u, v) in enumerate(zip(arc.node_ids[:-1], arc.node_ids[1:])):
            self.segment_arc.setdefault((u, v), (arc.arc_id, i))

    def _build_index(self):
        if self.nodes:
            lats = [n.point.lat for n in self.nodes.values()]
            lons = [n.point.lon for n in self.nodes.values()]
            self.frame = LocalFrame((min(lats) + max(lats)) / 2, (min(lons) + max(lons)) / 2)
        else:
            self.frame = LocalFrame(0.0, 0.0)
        self._grid: dict[tuple[int, int], list[int]] = defaultdict(list)
        c = self.CELL_M
        for arc in self.arcs:
            xy = [self.frame.to_xy(self.nodes[n].point.lat, self.nodes[n].point.lon)
                  for n in arc.node_ids]
            cells = set()
            for (ax, ay), (bx, by) in zip(xy[:-1], xy[1:]):
                for cx in range(math.floor(min(ax, bx) / c), math.floor(max(ax, bx) / c) + 1):
                    for cy in range(math.floor(min(ay, by) / c), math.floor(max(ay, by) / c) + 1):
                        cells.add((cx, cy))
            for cell in sorted(cells):
                self._grid[cell].append(arc.arc_id)

    # queries ------------------------------------------------------------

    def node_point(self, node_id: int) -> GeoPoint:
        return self.nodes[node_id].point

    def arc_point(self, arc_id: int, offset: float) -> GeoPoint:
        arc = self.arcs[arc_id]
        i = arc.segment_at(offset)
        a = self.nodes[arc.node_ids[i]].point
        b = self.nodes[arc.node_ids[i + 1]].point
        seg = arc.cum[i + 1] - arc.cum[i]
        f = 0.0 if seg == 0 else min(1.0, max(0.0, (offset - arc.cum[i]) / seg))
        return GeoPoint(a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f)

    def arcs_near(self, p: GeoPoint, radius_m: float) -> list[int]:
        x, y = self.frame.to_xy(p.lat, p.lon)
        # slack for the fixed-origin projection across a city-sized extract
        r = radius_m * 1.02 + 1.0
        c = self.CELL_M
        found: set[int] = set()
        for cx in range(math.floor((x - r) / c), math.floor((x + r) / c) + 1):
            for cy in range(math.floor((y - r) / c), math.floor((y + r) / c) + 1):
                found.update(self._grid.get((cx, cy), ()))
        return sorted(found)

    def project(self, p: GeoPoint, arc_id: int) -> Candidate:
        """Closest point of an arc polyline to ``p``."""
        arc = self.arcs[arc_id]
        local = LocalFrame(p.lat, p.lon)
        best = None
        pts = [self.nodes[n].point for n in arc.node_ids]
        xy = [local.to_xy(q.lat, q.lon) for q in pts]
        for i in range(len(pts) - 1):
            (ax, ay), (bx, by) = xy[i], xy[i + 1]
            t = project_to_segment(0.0, 0.0, ax, ay, bx, by)
            qx, qy = ax + (bx - ax) * t, ay + (by - ay) * t
            d2 = qx * qx + qy * qy
            if best is None or d2 < best[0]:
                best = (d2, i, t)
        _, i, t = best
        a, b = pts[i], pts[i + 1]
        q = GeoPoint(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t)
        offset = arc.cum[i] + (arc.cum[i + 1] - arc.cum[i]) * t
        return Candidate(arc_id, arc.way_id, q, offset, haversine_m(p.lat, p.lon, q.lat, q.lon))

    def segment_to_arc(self, u: int, v: int) -> int | None:
        hit = self.segment_arc.get((u, v))
        return None if hit is None else hit[0]


def nearest_candidates(net: RoadNetwork, p: GeoPoint, radius_m: float, k: int) -> list[Candidate]:
    """Up to ``k`` arcs within ``radius_m`` of ``p``, nearest first.

    Ties are broken by (way_id, arc_id). Both directions of a two-way street
    appear as separate candidates.
    """
    if radius_m <= 0 or k <= 0:
        return []
    cands = [net.project(p, a) for a in net.arcs_near(p, radius_m)]
    cands = [c for c in cands if c.distance_m <= radius_m]
    cands.sort(key=lambda c: (c.distance_m, c.way_id, c.arc_id))
    return cands[:k]


def node_to_ways(net: RoadNetwork, node_id: int) -> list[int]:
    if node_id not in net.nodes:
        raise UnknownNode(node_id)
    return list(net._node_ways.get(node_id, ()))


# --------------------------------------------------------------------------
# routing


class Router:
    """Dijkstra over arc endpoints with a per-source cache.

    Not thread-safe; create one per worker or per matched segment.
    """

    def __init__(self, net: RoadNetwork):
        self.net = net
        self._cache: dict[int, tuple[float, dict[int, float], dict[int, int]]] = {}

    def _search(self, src: int, cutoff: float):
        hit = self._cache.get(src)
        if hit is not None and hit[0] >= cutoff:
            return hit
        net = self.net
        dist = {src: 0.0}
        pred: dict[int, int] = {}
        heap = [(0.0, src)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for aid in net.out_arcs.get(u, ()):
                arc = net.arcs[aid]
                nd = d + arc.length
                if nd > cutoff:
                    continue
                v = arc.end
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    pred[v] = aid
                    heapq.heappush(heap, (nd, v))
        entry = (cutoff, dist, pred)
        self._cache[src] = entry
        return entry

    def node_distance(self, src: int, dst: int, cutoff: float = math.inf) -> float:
        return self._search(src, cutoff)[1].get(dst, math.inf)

    def node_path(self, src: int, dst: int) -> list[int]:
        """Arc ids of a shortest path from node ``src`` to ``dst``."""
        _, dist, pred = self._search(src, math.inf)
        if dst not in dist:
            raise Unreachable(f"node {dst} unreachable from {src}")
        path = []
        v = dst
        while v != src:
            aid = pred[v]
            path.append(aid)
            v = self.net.arcs[aid].start
        path.reverse()
        return path

    def anchor_distance(self, a: Anchor, b: Anchor, cutoff: float = math.inf) -> float:
        """Network distance between anchors honoring arc direction (inf if none)."""
        arcs = self.net.arcs
        if a.arc_id == b.arc_id and b.offset_m >= a.offset_m:
            return b.offset_m - a.offset_m
        arc_a = arcs[a.arc_id]
        head = arc_a.length - a.offset_m
        mid = self.node_distance(arc_a.end, arcs[b.arc_id].start, cutoff - head - b.offset_m)
        return head + mid + b.offset_m

    def anchor_path(self, a: Anchor, b: Anchor) -> list[int]:
        """Arcs touched going from ``a`` to ``b``, including both anchor arcs."""
        if a.arc_id == b.arc_id and b.offset_m >= a.offset_m:
            return [a.arc_id]
        arcs = self.net.arcs
        return [a.arc_id] + self.node_path(arcs[a.arc_id].end, arcs[b.arc_id].start) + [b.arc_id]


def route_distance(net: RoadNetwork, frm: Anchor | tuple[int, float], to: Anchor | tuple[int, float],
                   router: Router | None = None) -> float:
    """Shortest network distance in meters; raises Unreachable."""
    frm = frm if isinstance(frm, Anchor) else Anchor(*frm)
    to = to if isinstance(to, Anchor) else Anchor(*to)
    d = (router or Router(net)).anchor_distance(frm, to)
    if math.isinf(d):
        raise Unreachable(f"no route from arc {frm.arc_id} to arc {to.arc_id}")
    return d


# --------------------------------------------------------------------------
# parsing


def _build(raw_nodes: dict[int, tuple[float, float, dict]], raw_ways: list[tuple[int, list[int], dict]],
           signal_filter: SignalFilter | None) -> RoadNetwork:
    sf = signal_filter or SignalFilter()
    warnings: list[str] = []
    ways: dict[int, RoadWay] = {}
    used: set[int] = set()
    for way_id, refs, tags in raw_ways:
        if "highway" not in tags:
            continue
        missing = [r for r in refs if r not in raw_nodes]
        if missing:
            warnings.append(f"way {way_id}: dangling node reference {missing[0]}; skipped")
            log.warning(warnings[-1])
            continue
        ids = [r for i, r in enumerate(refs) if i == 0 or r != refs[i - 1]]
        if len(ids) < 2:
            warnings.append(f"way {way_id}: fewer than two nodes; skipped")
            continue
        length = sum(
            haversine_m(raw_nodes[a][0], raw_nodes[a][1], raw_nodes[b][0], raw_nodes[b][1])
            for a, b in zip(ids[:-1], ids[1:])
        )
        if length <= 0:
            warnings.append(f"way {way_id}: zero length; skipped")
            continue
        oneway, rev = _oneway(tags)
        ways[way_id] = RoadWay(way_id, tuple(ids), WayTags.from_osm(tags), length, oneway, rev, dict(tags))
        used.update(ids)
    nodes: dict[int, RoadNode] = {}
    node_tags: dict[int, dict[str, str]] = {}
    for nid, (lat, lon, tags) in raw_nodes.items():
        if nid not in used:
            continue
        nodes[nid] = RoadNode(nid, GeoPoint(lat, lon), sf.is_signal(tags))
        if tags:
            node_tags[nid] = dict(tags)
    return RoadNetwork(nodes, ways, warnings, node_tags)


def _parse_xml(data: bytes):
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedOsm(f"not well-formed XML: {exc}") from exc
    if root.tag != "osm":
        raise MalformedOsm(f"root element is <{root.tag}>, expected <osm>")
    nodes, ways = {}, []
    try:
        for el in root:
            if el.tag == "node":
                tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
                nodes[int(el.get("id"))] = (float(el.get("lat")), float(el.get("lon")), tags)
            elif el.tag == "way":
                refs = [int(nd.get("ref")) for nd in el.findall("nd")]
                tags = {t.get("k"): t.get("v") for t in el.findall("tag")}
                ways.append((int(el.get("id")), refs, tags))
    except (TypeError, ValueError) as exc:
        raise MalformedOsm(f"bad element attribute: {exc}") from exc
    return nodes, ways


def _parse_overpass_json(data: bytes):
    try:
        doc = json.loads(data)
        elements = doc["elements"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedOsm(f"not an Overpass JSON document: {exc}") from exc
    nodes, ways = {}, []
    try:
        for el in elements:
            if el.get("type") == "node":
                nodes[int(el["id"])] = (float(el["lat"]), float(el["lon"]), dict(el.get("tags", {})))
            elif el.get("type") == "way":
                ways.append((int(el["id"]), [int(n) for n in el["nodes"]], dict(el.get("tags", {}))))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedOsm(f"bad element: {exc}") from exc
    return nodes, ways


def parse_osm(data: bytes, fmt: str = "auto", signal_filter: SignalFilter | None = None) -> RoadNetwork:
    """Build a network from OSM XML or Overpass JSON.

    Every way with a ``highway`` tag is kept. Ways that reference a node
    missing from the document are skipped and listed in ``net.warnings``.
    """
    if fmt == "auto":
        fmt = "overpass_json" if data.lstrip()[:1] in (b"{", b"[") else "xml"
    if fmt == "xml":
        nodes, ways = _parse_xml(data)
    elif fmt == "overpass_json":
        nodes, ways = _parse_overpass_json(data)
    else:
        raise ValueError(f"unknown OSM format {fmt!r}")
    return _build(nodes, ways, signal_filter)


def load_network(path, signal_filter: SignalFilter | None = None) -> RoadNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    fmt = "overpass_json" if str(path).endswith(".json") else "auto"
    return parse_osm(data, fmt, signal_filter)


def to_osm_xml(net: RoadNetwork) -> bytes:
    """Serialize the ingested network back to OSM XML."""
    root = ET.Element("osm", {"version": "0.6", "generator": "cycletrail"})
    for nid in sorted(net.nodes):
        p = net.nodes[nid].point
        el = ET.SubElement(root, "node", {"id": str(nid), "lat": repr(p.lat), "lon": repr(p.lon)})
        for k, v in sorted(net.node_tags.get(nid, {}).items()):
            ET.SubElement(el, "tag", {"k": k, "v": v})
    for way in net.ways.values():
        el = ET.SubElement(root, "way", {"id": str(way.way_id)})
        for nid in way.node_ids:
            ET.SubElement(el, "nd", {"ref": str(nid)})
        for k, v in sorted(way.raw_tags.items()):
            ET.SubElement(el, "tag", {"k": k, "v": v})
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def arcs_from_nodes(net: RoadNetwork, node_ids: Iterable[int]) -> list[int]:
    """Convert an ordered node path into the sequence of arcs it traverses.

    Consecutive ids may be adjacent way vertices or arc endpoints (junction to
    junction). A path that starts or ends inside an arc counts that whole arc.
    Raises KeyError on a step that no arc provides.
    """
    ids = list(node_ids)
    out: list[int] = []
    last_arc, last_seg = None, -1
    for u, v in zip(ids[:-1], ids[1:]):
        if u == v:
            continue
        hit = net.segment_arc.get((u, v))
        if hit is not None:
            aid, seg = hit
            if aid == last_arc and seg > last_seg:
                last_seg = seg
                continue
            out.append(aid)
            last_arc, last_seg = aid, seg
            continue
        options = [a for a in net.out_arcs.get(u, ()) if net.arcs[a].end == v]
        if not options:
            raise KeyError((u, v))
        aid = min(options, key=lambda a: (net.arcs[a].length, a))
        out.append(aid)
        last_arc, last_seg = aid, len(net.arcs[aid].node_ids) - 2
    return out
