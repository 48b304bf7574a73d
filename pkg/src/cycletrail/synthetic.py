"""Synthetic grid networks and noisy 1 Hz rides with known routes."""

from __future__ import annotations

import random
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .evaluation import evaluate_against_truth
from .geo import GeoPoint, LocalFrame, Waypoint
from .matcher import match_segment
from .network import RoadNetwork, Router, parse_osm
from .preprocess import PreprocessConfig, Trajectory, preprocess

CYCLEWAY_CHOICES = (None, None, "lane", "track", "shared_lane", "share_busway", "separate")


def grid_osm(rows: int = 8, cols: int = 8, spacing_m: float = 100.0,
             origin: tuple[float, float] = (51.5, -0.12), seed: int = 0,
             oneway_fraction: float = 0.0, signal_fraction: float = 0.0) -> bytes:
    """OSM XML for a street grid: one way per row and per column.

    Each block carries a mid-block vertex so arcs have interior nodes. With a
    seed, streets get random cycleway sides, 20/30 mph limits, oneway flags
    and signalised junctions (plus a few pedestrian-only signals).
    """
    rng = random.Random(seed)
    frame = LocalFrame(*origin)
    root = ET.Element("osm", {"version": "0.6", "generator": "cycletrail-synthetic"})

    def junction(r, c):
        return 1_000_000 + r * cols + c

    def node(nid, x, y, tags=()):
        lat, lon = frame.to_latlon(x, y)
        el = ET.SubElement(root, "node", {"id": str(nid), "lat": f"{lat:.9f}", "lon": f"{lon:.9f}"})
        for k, v in tags:
            ET.SubElement(el, "tag", {"k": k, "v": v})

    for r in range(rows):
        for c in range(cols):
            tags = ()
            u = rng.random()
            if u < signal_fraction:
                tags = (("highway", "traffic_signals"),)
            elif u < signal_fraction * 1.3:
                tags = (("highway", "traffic_signals"), ("crossing", "traffic_signals"))
            node(junction(r, c), c * spacing_m, r * spacing_m, tags)
    # mid-block vertices: rows then columns
    for r in range(rows):
        for c in range(cols - 1):
            node(2_000_000 + r * cols + c, (c + 0.5) * spacing_m, r * spacing_m)
    for c in range(cols):
        for r in range(rows - 1):
            node(3_000_000 + c * rows + r, c * spacing_m, (r + 0.5) * spacing_m)

    def way(wid, refs, name):
        el = ET.SubElement(root, "way", {"id": str(wid)})
        for ref in refs:
            ET.SubElement(el, "nd", {"ref": str(ref)})
        tags = {"highway": rng.choice(("residential", "tertiary", "secondary")), "name": name}
        tags["maxspeed"] = rng.choice(("20 mph", "30 mph", "32", "48", "40 mph"))
        for side in ("left", "right", "both"):
            v = rng.choice(CYCLEWAY_CHOICES)
            if v is not None and (side != "both" or rng.random() < 0.4):
                tags[f"cycleway:{side}"] = v
        if rng.random() < 0.3:
            tags["lanes"] = str(rng.choice((1, 2, 3)))
        if rng.random() < 0.15:
            tags["traffic_calming"] = "hump"
        if rng.random() < oneway_fraction:
            tags["oneway"] = "yes"
        for k, v in sorted(tags.items()):
            ET.SubElement(el, "tag", {"k": k, "v": v})

    for r in range(rows):
        refs = []
        for c in range(cols):
            refs.append(junction(r, c))
            if c < cols - 1:
                refs.append(2_000_000 + r * cols + c)
        way(100 + r, refs, f"Row {r} Street")
    for c in range(cols):
        refs = []
        for r in range(rows):
            refs.append(junction(r, c))
            if r < rows - 1:
                refs.append(3_000_000 + c * rows + r)
        way(500 + c, refs, f"Column {c} Avenue")
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def random_route(net: RoadNetwork, rng: random.Random, n_arcs: int = 15,
                 start_node: int | None = None) -> list[int]:
    """Arc ids of a random walk without U-turns or repeated streets."""
    junctions = sorted(n for n in net.out_arcs if net.out_arcs[n])
    for _ in range(100):
        node = start_node if start_node is not None else rng.choice(junctions)
        route: list[int] = []
        used: set[frozenset] = set()
        while len(route) < n_arcs:
            options = [
                a for a in net.out_arcs.get(node, ())
                if frozenset((net.arcs[a].start, net.arcs[a].end)) not in used
            ]
            if not options:
                break
            aid = rng.choice(sorted(options))
            arc = net.arcs[aid]
            used.add(frozenset((arc.start, arc.end)))
            route.append(aid)
            node = arc.end
        if len(route) == n_arcs:
            return route
    raise RuntimeError("could not draw a route of the requested length")


def route_nodes(net: RoadNetwork, route: list[int]) -> list[int]:
    nodes = list(net.arcs[route[0]].node_ids)
    for aid in route[1:]:
        nodes.extend(net.arcs[aid].node_ids[1:])
    return nodes


@dataclass
class Ride:
    points: list[Waypoint]
    route: list[int]
    nodes: list[int]


def simulate_ride(net: RoadNetwork, route: list[int], rng: random.Random, speed_ms: float = 5.0,
                  noise_m: float = 5.0, start_time: float = 1_700_000_000.0,
                  start_fraction: float = 0.3, end_fraction: float = 0.7,
                  stops: tuple[tuple[float, float], ...] = ()) -> Ride:
    """Sample a ride along ``route`` at 1 Hz with isotropic Gaussian noise.

    The ride starts ``start_fraction`` into the first arc and ends
    ``end_fraction`` into the last. ``stops`` holds (distance_m, seconds)
    pauses measured from the ride start.
    """
    verts: list[GeoPoint] = [net.node_point(n) for n in route_nodes(net, route)]
    cum = [0.0]
    for aid in route:
        arc = net.arcs[aid]
        cum.extend(cum[-1] + c for c in arc.cum[1:])
    first, last = net.arcs[route[0]].length, net.arcs[route[-1]].length
    s0 = start_fraction * first
    s1 = cum[-1] - (1 - end_fraction) * last

    def at(s: float) -> GeoPoint:
        i = 0
        while i < len(cum) - 2 and cum[i + 1] < s:
            i += 1
        seg = cum[i + 1] - cum[i]
        f = 0.0 if seg == 0 else (s - cum[i]) / seg
        a, b = verts[i], verts[i + 1]
        return GeoPoint(a.lat + (b.lat - a.lat) * f, a.lon + (b.lon - a.lon) * f)

    pending = sorted(stops)
    pts: list[Waypoint] = []
    s, t, wait = s0, 0, 0.0
    while s <= s1:
        p = at(s)
        frame = LocalFrame(p.lat, p.lon)
        lat, lon = frame.to_latlon(rng.gauss(0, noise_m), rng.gauss(0, noise_m))
        pts.append(Waypoint(GeoPoint(lat, lon), start_time + t, len(pts)))
        t += 1
        if wait > 0:
            wait -= 1
            continue
        if pending and s - s0 >= pending[0][0]:
            wait = pending.pop(0)[1] - 1
            continue
        s += speed_ms
    return Ride(pts, route, route_nodes(net, route))


@dataclass
class TrialResult:
    seed: int
    error_pct: float
    points: int
    match_seconds: float


def recovery_trial(seed: int, noise_m: float = 5.0, n_arcs: int = 15, rows: int = 8, cols: int = 8,
                   matcher_cfg=None, oneway_fraction: float = 0.1) -> TrialResult:
    """Simulate one noisy ride on a seeded grid, clean it, match it and score it.

    The error is the route-difference rate against the simulated route.
    """
    rng = random.Random(seed)
    net = parse_osm(grid_osm(rows, cols, seed=seed, oneway_fraction=oneway_fraction))
    ride = simulate_ride(net, random_route(net, rng, n_arcs), rng, noise_m=noise_m)
    segs, _ = preprocess(Trajectory(f"trial{seed}", ride.points), PreprocessConfig(min_points=1))
    seg = max(segs, key=len)
    t0 = time.perf_counter()
    mt = match_segment(net, seg, matcher_cfg, Router(net))
    elapsed = time.perf_counter() - t0
    report = evaluate_against_truth(net, mt, ride.nodes)
    return TrialResult(seed, report.error_rate_pct, len(seg), elapsed)
