from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from cycletrail.errors import NoMatch
from cycletrail.geo import GeoPoint, Waypoint
from cycletrail.matcher import (
    Lattice, MatcherConfig, build_lattice, emission_log_prob, match_segment, path_score,
    transition_log_prob, viterbi,
)
from cycletrail.network import Anchor, Router, route_distance
from cycletrail.preprocess import TripSegment

from conftest import network, straight_way, track, xy
from oracles import enumerate_best, instances


def segment_of(pts, t0=0.0):
    return TripSegment("toy", 0, [Waypoint(p, t0 + i, i) for i, p in enumerate(pts)])


# --------------------------------------------------------------------------
# scoring


def test_emission_mode_and_monotone():
    s = 4.07
    assert emission_log_prob(0, s) > emission_log_prob(0.1, s) > emission_log_prob(10, s)
    assert emission_log_prob(s, s) == pytest.approx(emission_log_prob(0, s) - 0.5)
    assert emission_log_prob(0, s) == pytest.approx(-math.log(s * math.sqrt(2 * math.pi)))


@given(st.floats(0, 1000), st.floats(0, 1000))
def test_emission_decreasing(d1, d2):
    if d1 < d2:
        assert emission_log_prob(d1, 4.07) >= emission_log_prob(d2, 4.07)


def test_transition_algebra():
    b = 3.0
    top = transition_log_prob(50, 50, b)
    assert top == pytest.approx(-math.log(b))
    assert transition_log_prob(50, 53, b) == pytest.approx(top - 1)
    assert transition_log_prob(50, 47, b) == pytest.approx(top - 1)
    assert transition_log_prob(50, math.inf, b) == -math.inf
    assert transition_log_prob(50, None, b) == -math.inf


def test_config_validation():
    for bad in ({"sigma_m": 0}, {"beta_m": -1}, {"candidate_radius_m": 0}, {"candidate_k": 0},
                {"unmatched_policy": "keep"}):
        with pytest.raises(ValueError):
            MatcherConfig(**bad)


# --------------------------------------------------------------------------
# Viterbi against brute force


@pytest.mark.parametrize("case", range(20))
def test_viterbi_equals_enumeration(case):
    net, pts, cfg, lattice = instances(20, seed=99)[case]
    path, discarded, score = viterbi(lattice)
    assert discarded == []
    best, best_score = enumerate_best(lattice)
    assert [j for _, j in path] == list(best)
    assert score == best_score
    assert path_score(lattice, path) == score


def test_two_way_four_point_lattice():
    net = network({1: (0, 0), 2: (200, 0), 3: (0, 20), 4: (200, 20)}, [
        (1, [1, 2], {"highway": "residential"}), (2, [3, 4], {"highway": "residential"}),
        (3, [1, 3], {"highway": "residential"}),
    ])
    pts = [GeoPoint(*xy(x, 9.0 + (i % 2) * 2)) for i, x in enumerate((20, 45, 70, 95))]
    lattice = build_lattice(net, pts, MatcherConfig(max_detour_m=None), Router(net))
    assert all(len(c) <= 8 for c in lattice.candidates)
    path, _, score = viterbi(lattice)
    best, best_score = enumerate_best(lattice)
    assert [j for _, j in path] == list(best) and score == best_score


def table_lattice(emissions, trans):
    """Lattice from explicit score tables; trans[t][i][j] scores step t-1 -> t."""
    return Lattice([], [[None] * len(e) for e in emissions], emissions,
                   lambda s, i, t, j: trans[t][i][j])


def test_ties_resolve_to_smallest_index():
    em = [[-1.0, -1.0], [-1.0, -1.0], [-1.0, -1.0]]
    tr = {t: [[-1.0, -1.0], [-1.0, -1.0]] for t in (1, 2)}
    path, _, score = viterbi(table_lattice(em, tr))
    assert path == [(0, 0), (1, 0), (2, 0)] and score == -5.0


def test_tie_prefers_smaller_final_then_predecessor():
    em = [[0.0, 0.0], [-2.0, -1.0]]
    tr = {1: [[-1.0, -2.0], [0.0, -3.0]]}
    # both 0->1 and 1->0 reach -2; the final fix prefers candidate 0
    path, _, score = viterbi(table_lattice(em, tr))
    assert path == [(0, 1), (1, 0)] and score == -2.0


@st.composite
def integer_lattices(draw):
    steps = draw(st.integers(1, 5))
    sizes = [draw(st.integers(1, 4)) for _ in range(steps)]
    val = st.sampled_from([-3.0, -2.0, -1.0, 0.0])
    em = [[draw(val) for _ in range(n)] for n in sizes]
    tr = {t: [[draw(st.sampled_from([-2.0, -1.0, 0.0, -math.inf])) for _ in range(sizes[t])]
              for _ in range(sizes[t - 1])] for t in range(1, steps)}
    return em, tr


@given(integer_lattices())
def test_viterbi_ties_match_enumeration(lat):
    em, tr = lat
    lattice = table_lattice(em, tr)
    best, best_score = enumerate_best(lattice)
    if best_score == -math.inf:
        return  # severed lattices are covered by the discard tests
    path, discarded, score = viterbi(lattice)
    assert discarded == []
    assert [j for _, j in path] == list(best) and score == best_score


# --------------------------------------------------------------------------
# match_segment


def test_noiseless_straight_way():
    net = straight_way(400)
    seg = TripSegment("s", 0, track([(10 + 5 * i, 0.0) for i in range(60)]))
    mt = match_segment(net, seg)
    assert mt.discarded == [] and len(mt.points) == 60 and len(mt.legs) == 59
    assert {p.way_id for p in mt.points} == {10}
    assert max(p.emission_distance_m for p in mt.points) < 1e-6
    assert all(net.arcs[p.arc_id].forward for p in mt.points)
    assert [p.offset_m for p in mt.points] == pytest.approx([10 + 5 * i for i in range(60)], rel=1e-3)
    assert all(leg.distance_m == pytest.approx(5.0, rel=1e-3) for leg in mt.legs)
    assert sum(leg.duration_s for leg in mt.legs) == mt.points[-1].time - mt.points[0].time


def test_off_network_fix_discarded():
    net = straight_way(400)
    pts = [(10 + 5 * i, 0.0) for i in range(10)]
    pts[4] = (30.0, 500.0)
    seg = TripSegment("s", 0, track(pts))
    mt = match_segment(net, seg)
    assert mt.discarded == [4]
    assert [p.point_seq for p in mt.points] == [0, 1, 2, 3, 5, 6, 7, 8, 9]
    bridge = mt.legs[3]
    assert (bridge.from_seq, bridge.to_seq, bridge.duration_s) == (3, 5, 2.0)


def test_nothing_on_network_raises():
    net = straight_way(400)
    with pytest.raises(NoMatch):
        match_segment(net, TripSegment("s", 0, track([(0, 900), (5, 900)])))


def test_severed_fix_is_discarded():
    # a oneway street: the fix that would force a backwards move is dropped
    net = network({1: (0, 0), 2: (400, 0)}, [(1, [1, 2], {"highway": "residential", "oneway": "yes"})])
    xs = [10, 60, 110, 160, 30, 210, 260]  # fix 4 jumps 130 m back
    mt = match_segment(net, TripSegment("s", 0, track([(x, 0.0) for x in xs])),
                       MatcherConfig(max_detour_m=None))
    assert mt.discarded == [4]


@pytest.mark.parametrize("case", range(10))
def test_leg_invariants(case):
    net, pts, cfg, _ = instances(10, seed=7)[case]
    router = Router(net)
    mt = match_segment(net, segment_of(pts), cfg, router)
    assert len(mt.legs) == len(mt.points) - 1
    for leg, a, b in zip(mt.legs, mt.points, mt.points[1:]):
        expect = route_distance(net, Anchor(a.arc_id, a.arc_offset_m), Anchor(b.arc_id, b.arc_offset_m))
        assert leg.distance_m == pytest.approx(expect, rel=1e-6, abs=1e-9)
        assert leg.duration_s == b.time - a.time
        assert leg.distance_m >= 0
        for u, v in zip(leg.node_sequence, leg.node_sequence[1:]):
            assert (u, v) in net.segment_arc
        assert a.emission_distance_m <= cfg.candidate_radius_m


def test_backward_jitter_does_not_loop():
    net = network({1: (0, 0), 2: (100, 0), 3: (200, 0), 4: (100, 100), 5: (100, -100)}, [
        (1, [1, 2, 3], {"highway": "residential"}), (2, [4, 2, 5], {"highway": "residential"})])
    xs = [20, 30, 40, 37, 36, 45, 55, 52, 65, 75]
    mt = match_segment(net, TripSegment("s", 0, track([(x, 0.0) for x in xs])))
    assert len({p.arc_id for p in mt.points}) == 1
    offsets = [p.arc_offset_m for p in mt.points]
    assert offsets == sorted(offsets)
    assert sum(leg.distance_m for leg in mt.legs) == pytest.approx(offsets[-1] - offsets[0])


def test_turn_at_junction_crosses_intersection():
    net = network({1: (0, 0), 2: (100, 0), 3: (200, 0), 4: (100, 100), 5: (100, -100)}, [
        (1, [1, 2, 3], {"highway": "residential"}), (2, [4, 2, 5], {"highway": "residential"})])
    pts = [(x, 0.0) for x in range(40, 100, 8)] + [(100.0, y) for y in range(4, 70, 8)]
    mt = match_segment(net, TripSegment("s", 0, track(pts)))
    assert [p.way_id for p in mt.points][0] == 1 and mt.points[-1].way_id == 2
    assert sum(leg.intersections for leg in mt.legs) == 1
    turn = next(leg for leg in mt.legs if leg.intersections)
    assert 2 in turn.node_sequence


def test_deterministic_output():
    net, pts, cfg, _ = instances(1, seed=5)[0]
    a = match_segment(net, segment_of(pts), cfg)
    b = match_segment(net, segment_of(pts), cfg)
    assert a == b
