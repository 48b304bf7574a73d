"""Route-difference error of a matched trip against a ground-truth route.

With ``d0`` the length of the true route, ``d_minus`` the true length the
match missed and ``d_plus`` the length it added, the error rate is
``(d_minus + d_plus) / d0 * 100``.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import UnknownArc, ZeroTruthLength
from .matcher import MatchedTrip
from .network import RoadNetwork, arcs_from_nodes


@dataclass(frozen=True)
class RouteEntry:
    way_id: int
    from_node: int
    to_node: int
    length_m: float

    def key(self, directed: bool = True) -> tuple[int, int, int]:
        if directed:
            return (self.way_id, self.from_node, self.to_node)
        a, b = sorted((self.from_node, self.to_node))
        return (self.way_id, a, b)


@dataclass(frozen=True)
class RouteEdgeSet:
    """Ordered arc traversals; compared as a multiset."""

    entries: tuple[RouteEntry, ...] = ()

    @classmethod
    def from_arcs(cls, net: RoadNetwork, arc_ids: Iterable[int]) -> "RouteEdgeSet":
        out = []
        for aid in arc_ids:
            arc = net.arcs[aid]
            out.append(RouteEntry(arc.way_id, arc.start, arc.end, arc.length))
        return cls(tuple(out))

    @classmethod
    def from_nodes(cls, net: RoadNetwork, node_ids: Sequence[int]) -> "RouteEdgeSet":
        try:
            return cls.from_arcs(net, arcs_from_nodes(net, node_ids))
        except KeyError as exc:
            raise UnknownArc(f"no arc for step {exc.args[0]}") from exc

    @property
    def length_m(self) -> float:
        return sum(e.length_m for e in self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class EvaluationReport:
    trip_key: str
    d0_m: float
    d_plus_m: float
    d_minus_m: float
    error_rate_pct: float


def _check_known(net: RoadNetwork, routes: Iterable[RouteEdgeSet]):
    known = {(a.way_id, a.start, a.end) for a in net.arcs}
    for r in routes:
        for e in r.entries:
            if e.key() not in known:
                raise UnknownArc(f"({e.way_id}, {e.from_node}, {e.to_node}) is not a network arc")


def route_diff(truth: RouteEdgeSet, matched: RouteEdgeSet, net: RoadNetwork | None = None,
               directed: bool = True) -> tuple[float, float]:
    """``(d_plus, d_minus)``: length matched but not true, and true but not matched.

    Entries are compared as a multiset of arc traversals, so a repeated or
    reversed traversal is an entry of its own (unless ``directed`` is False).
    """
    if net is not None:
        _check_known(net, (truth, matched))

    def excess(a: RouteEdgeSet, b: RouteEdgeSet) -> float:
        remaining = Counter(e.key(directed) for e in b.entries)
        total = 0.0
        for e in a.entries:
            k = e.key(directed)
            if remaining[k] > 0:
                remaining[k] -= 1
            else:
                total += e.length_m
        return total

    return excess(matched, truth), excess(truth, matched)


def error_rate(d0_m: float, d_plus_m: float, d_minus_m: float) -> float:
    if not d0_m > 0:
        raise ZeroTruthLength(f"ground-truth route length must be positive, got {d0_m}")
    return (d_minus_m + d_plus_m) / d0_m * 100.0


def matched_node_path(mt: MatchedTrip) -> list[int]:
    """Leg node sequences joined into one path, overlaps at shared fixes removed."""
    path: list[int] = []
    for leg in mt.legs:
        nodes = list(leg.node_sequence)
        if len(path) >= 2 and nodes[:2] == path[-2:]:
            nodes = nodes[2:]
        elif path and nodes and nodes[0] == path[-1]:
            nodes = nodes[1:]
        path.extend(nodes)
    return path


def matched_route(net: RoadNetwork, mt: MatchedTrip) -> RouteEdgeSet:
    if not mt.legs:
        arcs = [mt.points[0].arc_id] if mt.points and mt.points[0].arc_id is not None else []
        return RouteEdgeSet.from_arcs(net, arcs)
    return RouteEdgeSet.from_nodes(net, matched_node_path(mt))


def evaluate_against_truth(net: RoadNetwork, mt: MatchedTrip, truth: RouteEdgeSet | Sequence[int],
                           directed: bool = True) -> EvaluationReport:
    if not isinstance(truth, RouteEdgeSet):
        truth = RouteEdgeSet.from_nodes(net, truth)
    matched = matched_route(net, mt)
    d_plus, d_minus = route_diff(truth, matched, net, directed)
    d0 = truth.length_m
    return EvaluationReport(mt.key, d0, d_plus, d_minus, error_rate(d0, d_plus, d_minus))


# --------------------------------------------------------------------------
# files


def read_truth_file(path: str | Path) -> dict[str, list[int]]:
    """``<segment key> <node> <node> ...`` per line; ``#`` starts a comment.

    The key is ``{trip_id}_{segment_index}``; node ids may be separated by
    whitespace or commas, and the key may end with a colon.
    """
    routes: dict[str, list[int]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        key, *nodes = line.split()
        try:
            routes[key.rstrip(":")] = [int(n) for n in nodes]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad node id ({exc})") from exc
    return routes


def write_truth_file(path: str | Path, routes: dict[str, Sequence[int]]) -> None:
    lines = [f"{key} " + " ".join(map(str, nodes)) for key, nodes in routes.items()]
    Path(path).write_text("\n".join(lines) + "\n")


REPORT_COLUMNS = ["ID", "length_m", "d_plus_m", "d_minus_m", "error_rate_pct"]


def total_report(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    d0 = sum(r.d0_m for r in reports)
    dp = sum(r.d_plus_m for r in reports)
    dm = sum(r.d_minus_m for r in reports)
    return EvaluationReport("Total", d0, dp, dm, error_rate(d0, dp, dm))


def write_report(path: str | Path, reports: Sequence[EvaluationReport]) -> None:
    rows = list(reports)
    if rows:
        rows.append(total_report(rows))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r.trip_key, f"{r.d0_m:.2f}", f"{r.d_plus_m:.2f}", f"{r.d_minus_m:.2f}",
                        f"{r.error_rate_pct:.2f}"])
