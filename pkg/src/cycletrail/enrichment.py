"""Attach OSM way attributes, travel direction, cycleway and signals to matches."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass
from typing import Sequence

from .errors import NodeNotOnWay
from .matcher import MatchedLeg, MatchedTrip
from .network import EMPTY_TAGS, RoadNetwork, WayTags

log = logging.getLogger(__name__)


class TravelDirection(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    UNDETERMINED = "undetermined"

    def flipped(self) -> "TravelDirection":
        if self is TravelDirection.FORWARD:
            return TravelDirection.BACKWARD
        if self is TravelDirection.BACKWARD:
            return TravelDirection.FORWARD
        return self


class Handedness(str, enum.Enum):
    RIGHT = "right"  # traffic keeps right
    LEFT = "left"  # traffic keeps left (UK)


def direction_of_travel(way_nodes: Sequence[int], leg_nodes: Sequence[int]) -> TravelDirection:
    """Compare the order of a leg's nodes with the way's own node order.

    Forward when the leg's nodes occur at strictly increasing positions of the
    way, Backward when strictly decreasing, Undetermined for a single node or
    an order that is neither. Closed ways, where one node occupies two
    positions, are handled by choosing positions greedily.
    """
    positions: dict[int, list[int]] = {}
    for i, n in enumerate(way_nodes):
        positions.setdefault(n, []).append(i)
    for n in leg_nodes:
        if n not in positions:
            raise NodeNotOnWay(n)
    if len(leg_nodes) < 2:
        return TravelDirection.UNDETERMINED

    def monotone(increasing: bool) -> bool:
        prev = -1 if increasing else len(way_nodes)
        for n in leg_nodes:
            opts = [i for i in positions[n] if (i > prev if increasing else i < prev)]
            if not opts:
                return False
            prev = min(opts) if increasing else max(opts)
        return True

    if monotone(True):
        return TravelDirection.FORWARD
    if monotone(False):
        return TravelDirection.BACKWARD
    return TravelDirection.UNDETERMINED


def cycleway_side(direction: TravelDirection, hand: Handedness) -> str | None:
    """Side of the way (in OSM's way-relative sense) the rider is on."""
    if direction is TravelDirection.UNDETERMINED:
        return None
    forward = direction is TravelDirection.FORWARD
    return "right" if forward == (hand is Handedness.RIGHT) else "left"


def assign_cycleway(tags: WayTags, direction: TravelDirection, hand: Handedness) -> str:
    side = cycleway_side(direction, hand)
    if side is not None:
        value = tags.cycleway_right if side == "right" else tags.cycleway_left
        if value is not None and value != "none":
            return value
    if tags.cycleway_both is not None:
        return tags.cycleway_both
    return "none"


def count_signals(net: RoadNetwork, leg: MatchedLeg, seen: set[int] | None = None) -> int:
    """Distinct signal nodes on the leg not already counted in ``seen``.

    Pass the same ``seen`` set for every leg of a trip so a signal shared by
    consecutive legs is attributed to the earlier one only.
    """
    seen = set() if seen is None else seen
    count = 0
    for n in leg.node_sequence:
        node = net.nodes.get(n)
        if node is not None and node.is_traffic_signal and n not in seen:
            seen.add(n)
            count += 1
    return count


@dataclass
class EnrichedPoint:
    trip_id: str
    segment_index: int
    point_seq: int
    lat: float
    lon: float
    way_id: int | None
    offset_m: float
    leg_distance_m: float
    leg_duration_s: float
    maxspeed_value: float | None
    maxspeed_unit: str | None
    highway: str | None
    name: str | None
    ref: str | None
    lanes: int | None
    traffic_calming: str | None
    cycleway_left: str | None
    cycleway_right: str | None
    cycleway_both: str | None
    direction: TravelDirection
    effective_cycleway: str
    signals_count: int
    stop_flag: bool | None
    participant_id: str
    node_sequence_digest: str

    @property
    def speed_ms(self) -> float | None:
        if self.leg_duration_s > 0:
            return self.leg_distance_m / self.leg_duration_s
        return None


def node_digest(nodes: Sequence[int]) -> str:
    if not nodes:
        return ""
    return hashlib.sha1(",".join(map(str, nodes)).encode()).hexdigest()[:16]


def _evidence(nodes: Sequence[int], on_way: set[int], tail: bool) -> list[int]:
    """Longest run of leg nodes lying on the way, at the leg's end or start."""
    seq = list(reversed(nodes)) if tail else list(nodes)
    run = []
    for n in seq:
        if n not in on_way:
            break
        run.append(n)
    return list(reversed(run)) if tail else run


def enrich_trip(net: RoadNetwork, mt: MatchedTrip, hand: Handedness = Handedness.LEFT,
                participant_id: str | None = None, backfill=None,
                warnings: list[str] | None = None) -> list[EnrichedPoint]:
    """One EnrichedPoint per retained fix.

    Each fix takes the leg that arrives at it (the first fix takes the leg
    leaving it) for direction, and the arriving leg's distance, duration and
    signal count. ``backfill`` is an optional object with ``fetch_way_tags``
    consulted for ways missing from ``net``.
    """
    warnings = [] if warnings is None else warnings
    participant_id = participant_id if participant_id is not None else mt.trip_id
    seen: set[int] = set()
    signals = [count_signals(net, leg, seen) for leg in mt.legs]
    out: list[EnrichedPoint] = []
    for i, p in enumerate(mt.points):
        arriving = mt.legs[i - 1] if i > 0 else None
        evidence_leg = arriving or (mt.legs[0] if mt.legs else None)

        way = net.ways.get(p.way_id) if p.way_id is not None else None
        if way is not None:
            tags = way.tags
        else:
            tags = EMPTY_TAGS
            if p.way_id is not None and backfill is not None:
                tags = backfill.fetch_way_tags([p.way_id]).get(p.way_id, EMPTY_TAGS)
            if tags is EMPTY_TAGS:
                warnings.append(f"{mt.key} fix {p.point_seq}: way {p.way_id} not in local extract")

        direction = TravelDirection.UNDETERMINED
        if way is not None and evidence_leg is not None:
            ev = _evidence(evidence_leg.node_sequence, set(way.node_ids), tail=arriving is not None)
            try:
                direction = direction_of_travel(way.node_ids, ev)
            except NodeNotOnWay as exc:
                warnings.append(f"{mt.key} fix {p.point_seq}: node {exc} not on way {p.way_id}")

        ms = tags.maxspeed
        out.append(EnrichedPoint(
            trip_id=mt.trip_id, segment_index=mt.segment_index, point_seq=p.point_seq,
            lat=p.snapped.lat, lon=p.snapped.lon, way_id=p.way_id, offset_m=p.offset_m,
            leg_distance_m=arriving.distance_m if arriving else 0.0,
            leg_duration_s=arriving.duration_s if arriving else 0.0,
            maxspeed_value=ms.value if ms else None, maxspeed_unit=ms.unit if ms else None,
            highway=tags.highway, name=tags.name, ref=tags.ref, lanes=tags.lanes,
            traffic_calming=tags.traffic_calming, cycleway_left=tags.cycleway_left,
            cycleway_right=tags.cycleway_right, cycleway_both=tags.cycleway_both,
            direction=direction, effective_cycleway=assign_cycleway(tags, direction, hand),
            signals_count=signals[i - 1] if arriving else 0, stop_flag=None,
            participant_id=participant_id,
            node_sequence_digest=node_digest(arriving.node_sequence) if arriving else "",
        ))
    for w in warnings:
        log.debug(w)
    return out
