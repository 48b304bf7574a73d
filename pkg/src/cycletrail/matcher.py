"""Hidden-Markov map matching with Viterbi decoding.

States are candidate positions on network arcs near each fix. Emissions are a
zero-mean Gaussian in the fix-to-candidate distance; transitions are an
exponential in the discrepancy between the straight-line distance of two
consecutive fixes and the network distance between their candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import NoMatch
from .geo import GeoPoint, haversine_distance
from .network import Anchor, Candidate, RoadNetwork, Router, nearest_candidates
from .preprocess import TripSegment

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class MatcherConfig:
    sigma_m: float = 4.07
    beta_m: float = 3.0
    candidate_radius_m: float = 50.0
    candidate_k: int = 8
    # A candidate up to this far behind the previous one on the same arc is
    # read as the rider standing still rather than looping round the block.
    backward_tolerance_m: float = 15.0
    # Transitions whose route exceeds the straight line by more than this are
    # forbidden; None disables the bound (exact but slower).
    max_detour_m: float | None = 500.0
    unmatched_policy: str = "discard"

    def __post_init__(self):
        if not (self.sigma_m > 0 and self.beta_m > 0 and self.candidate_radius_m > 0):
            raise ValueError("sigma_m, beta_m and candidate_radius_m must be positive")
        if self.candidate_k < 1:
            raise ValueError("candidate_k must be at least 1")
        if self.backward_tolerance_m < 0:
            raise ValueError("backward_tolerance_m must be non-negative")
        if self.unmatched_policy != "discard":
            raise ValueError("only the 'discard' unmatched policy is supported")


@dataclass(frozen=True)
class MatchedPoint:
    point_seq: int
    time: float
    snapped: GeoPoint
    way_id: int
    arc_id: int | None
    arc_offset_m: float
    offset_m: float  # along the way, from its first node
    emission_distance_m: float


@dataclass(frozen=True)
class MatchedLeg:
    from_seq: int
    to_seq: int
    node_sequence: tuple[int, ...]
    distance_m: float
    duration_s: float
    intersections: int
    arcs: tuple[int, ...] = ()


@dataclass
class MatchedTrip:
    trip_id: str
    segment_index: int
    points: list[MatchedPoint]
    legs: list[MatchedLeg]
    discarded: list[int] = field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.trip_id}_{self.segment_index}"


# --------------------------------------------------------------------------
# probabilities


def emission_log_prob(distance_m: float, sigma_m: float) -> float:
    z = distance_m / sigma_m
    return -0.5 * z * z - math.log(sigma_m) - _LOG_SQRT_2PI


def transition_log_prob(gc_m: float, route_m: float | None, beta_m: float) -> float:
    """``route_m`` of None or inf means unreachable."""
    if route_m is None or math.isinf(route_m):
        return -math.inf
    return -math.log(beta_m) - abs(gc_m - route_m) / beta_m


# --------------------------------------------------------------------------
# lattice


@dataclass
class Lattice:
    """Candidates and emission scores per fix, plus a transition scorer."""

    observations: list[GeoPoint]
    candidates: list[list[Candidate]]
    emissions: list[list[float]]
    transition: Callable[[int, int, int, int], float]


def transition_route(router: Router, a: Candidate, b: Candidate, gc_m: float,
                     cfg: MatcherConfig) -> float:
    """Network distance used to score a transition (inf when forbidden)."""
    if a.arc_id == b.arc_id:
        if b.offset_m >= a.offset_m:
            return b.offset_m - a.offset_m
        if a.offset_m - b.offset_m <= cfg.backward_tolerance_m:
            return 0.0
    bound = math.inf if cfg.max_detour_m is None else gc_m + cfg.max_detour_m
    route = router.anchor_distance(Anchor(a.arc_id, a.offset_m), Anchor(b.arc_id, b.offset_m), bound)
    return route if route <= bound else math.inf


def build_lattice(net: RoadNetwork, observations: Sequence[GeoPoint], cfg: MatcherConfig,
                  router: Router | None = None) -> Lattice:
    router = router or Router(net)
    obs = list(observations)
    cands = [nearest_candidates(net, p, cfg.candidate_radius_m, cfg.candidate_k) for p in obs]
    emis = [[emission_log_prob(c.distance_m, cfg.sigma_m) for c in cs] for cs in cands]
    gc_cache: dict[tuple[int, int], float] = {}

    def transition(s: int, i: int, t: int, j: int) -> float:
        gc = gc_cache.get((s, t))
        if gc is None:
            gc = gc_cache[(s, t)] = haversine_distance(obs[s], obs[t])
        route = transition_route(router, cands[s][i], cands[t][j], gc, cfg)
        return transition_log_prob(gc, route, cfg.beta_m)

    return Lattice(obs, cands, emis, transition)


def viterbi(lattice: Lattice) -> tuple[list[tuple[int, int]], list[int], float]:
    """Most likely candidate per fix.

    Returns ``(path, discarded, score)`` where ``path`` holds
    ``(step, candidate)`` pairs for retained fixes. Fixes without candidates,
    or that no surviving path can reach, are discarded and the lattice is
    bridged from the last retained fix. Ties go to the smallest candidate
    index, scanning back from the final fix.
    """
    columns: list[tuple[int, list[float], list[int] | None]] = []
    discarded: list[int] = []
    for t, em in enumerate(lattice.emissions):
        if not em:
            discarded.append(t)
            continue
        if not columns:
            columns.append((t, list(em), None))
            continue
        s, prev, _ = columns[-1]
        delta: list[float] = []
        back: list[int] = []
        for j, e in enumerate(em):
            best, arg = -math.inf, -1
            for i, p in enumerate(prev):
                if p == -math.inf:
                    continue
                v = p + lattice.transition(s, i, t, j)
                if v > best:
                    best, arg = v, i
            delta.append(best + e if arg >= 0 else -math.inf)
            back.append(arg)
        if all(d == -math.inf for d in delta):
            discarded.append(t)
            continue
        columns.append((t, delta, back))
    if not columns:
        raise NoMatch("no fix has a candidate road within the search radius")

    t, delta, back = columns[-1]
    j = max(range(len(delta)), key=lambda k: (delta[k], -k))
    score = delta[j]
    path = [(t, j)]
    for col in range(len(columns) - 1, 0, -1):
        j = columns[col][2][j]
        path.append((columns[col - 1][0], j))
    path.reverse()
    return path, discarded, score


def path_score(lattice: Lattice, path: Sequence[tuple[int, int]]) -> float:
    """Joint log-probability of a path, accumulated in Viterbi order."""
    (s, i), rest = path[0], path[1:]
    total = lattice.emissions[s][i]
    for t, j in rest:
        total = total + lattice.transition(s, i, t, j) + lattice.emissions[t][j]
        s, i = t, j
    return total


# --------------------------------------------------------------------------
# matching


def _leg_nodes(net: RoadNetwork, arcs: list[int], a: Anchor, b: Anchor) -> tuple[int, ...]:
    """OSM nodes of every way segment touched between two anchors."""
    first, last = net.arcs[arcs[0]], net.arcs[arcs[-1]]
    ia, ib = first.segment_at(a.offset_m), last.segment_at(b.offset_m)
    if len(arcs) == 1:
        return first.node_ids[ia: ib + 2]
    nodes = list(first.node_ids[ia:])
    for aid in arcs[1:-1]:
        nodes.extend(net.arcs[aid].node_ids[1:])
    nodes.extend(last.node_ids[1: ib + 2])
    return tuple(nodes)


def build_leg(net: RoadNetwork, router: Router, pa: MatchedPoint, pb: MatchedPoint) -> MatchedLeg:
    a = Anchor(pa.arc_id, pa.arc_offset_m)
    b = Anchor(pb.arc_id, pb.arc_offset_m)
    arcs = router.anchor_path(a, b)
    distance = router.anchor_distance(a, b)
    crossed = [net.arcs[aid].end for aid in arcs[:-1]]
    intersections = sum(1 for n in crossed if net.degree.get(n, 0) >= 3)
    return MatchedLeg(
        pa.point_seq, pb.point_seq, _leg_nodes(net, arcs, a, b), distance,
        pb.time - pa.time, intersections, tuple(arcs),
    )


def match_segment(net: RoadNetwork, seg: TripSegment, cfg: MatcherConfig | None = None,
                  router: Router | None = None) -> MatchedTrip:
    cfg = cfg or MatcherConfig()
    router = router or Router(net)
    lattice = build_lattice(net, [wp.point for wp in seg.points], cfg, router)
    path, discarded, _ = viterbi(lattice)

    points: list[MatchedPoint] = []
    prev_raw: Candidate | None = None
    for t, j in path:
        c = lattice.candidates[t][j]
        offset, snapped = c.offset_m, c.point
        if points and prev_raw.arc_id == c.arc_id:
            prev = points[-1]
            # Same reading as the transition score: moving on, or a slip small
            # enough to be standing still. Either way never slide backwards
            # past the position already reported.
            held = prev_raw.offset_m - c.offset_m <= cfg.backward_tolerance_m
            if held and offset < prev.arc_offset_m:
                offset, snapped = prev.arc_offset_m, prev.snapped
        prev_raw = c
        arc = net.arcs[c.arc_id]
        points.append(MatchedPoint(
            point_seq=t, time=seg.points[t].time, snapped=snapped, way_id=arc.way_id,
            arc_id=arc.arc_id, arc_offset_m=offset, offset_m=arc.way_offset(offset),
            emission_distance_m=c.distance_m,
        ))
    legs = [build_leg(net, router, pa, pb) for pa, pb in zip(points[:-1], points[1:])]
    return MatchedTrip(seg.trip_id, seg.segment_index, points, legs, discarded)
