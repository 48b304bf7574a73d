from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from cycletrail.geo import GeoPoint, LocalFrame, Waypoint
from cycletrail.network import parse_osm

ROOT = Path(__file__).resolve().parents[1]
TOY = ROOT / "fixtures" / "toy"
DATA = Path(__file__).resolve().parent / "data"

ORIGIN = (51.5, -0.12)
FRAME = LocalFrame(*ORIGIN)


def xy(x: float, y: float) -> tuple[float, float]:
    """(lat, lon) of a point x m east and y m north of the test origin."""
    return FRAME.to_latlon(x, y)


def osm_xml(nodes: dict, ways: list) -> bytes:
    """nodes: id -> (x_m, y_m[, tags]); ways: (id, [refs], tags)."""
    root = ET.Element("osm", {"version": "0.6"})
    for nid, node in nodes.items():
        lat, lon = xy(node[0], node[1])
        el = ET.SubElement(root, "node", {"id": str(nid), "lat": repr(lat), "lon": repr(lon)})
        for k, v in (node[2] if len(node) > 2 else {}).items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    for wid, refs, tags in ways:
        el = ET.SubElement(root, "way", {"id": str(wid)})
        for r in refs:
            ET.SubElement(el, "nd", {"ref": str(r)})
        for k, v in tags.items():
            ET.SubElement(el, "tag", {"k": k, "v": v})
    return ET.tostring(root)


def network(nodes: dict, ways: list):
    return parse_osm(osm_xml(nodes, ways))


def straight_way(length_m: float = 400.0, step_m: float = 100.0, tags=None):
    """One east-west residential way along y = 0."""
    n = int(length_m // step_m)
    nodes = {i + 1: (i * step_m, 0.0) for i in range(n + 1)}
    tags = {"highway": "residential", "name": "Straight Road"} if tags is None else tags
    return network(nodes, [(10, list(nodes), tags)])


def track(points_xy, t0: float = 0.0, dt: float = 1.0) -> list[Waypoint]:
    out = []
    for i, (x, y) in enumerate(points_xy):
        lat, lon = xy(x, y)
        out.append(Waypoint(GeoPoint(lat, lon), t0 + i * dt, i))
    return out


def meridian_offset_deg(meters: float, radius: float = 6_371_008.8) -> float:
    """Latitude change for ``meters`` along a meridian on the sphere."""
    return math.degrees(meters / radius)


@pytest.fixture(scope="session")
def toy_dir() -> Path:
    if not (TOY / "config.toml").exists():
        pytest.skip("toy fixture missing; run scripts/make_toy_fixture.py")
    return TOY


# --------------------------------------------------------------------------
# acceptance criteria summary

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
