"""A local stand-in for an OSRM ``/match`` service, backed by the built-in matcher."""

from __future__ import annotations

import json
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from cycletrail.geo import GeoPoint, Waypoint
from cycletrail.matcher import match_segment
from cycletrail.osrm import to_match_response
from cycletrail.preprocess import TripSegment

TRACEPOINT_EXTRAS = ("way_id", "arc_id", "arc_offset_m", "offset_m", "point_seq", "time")
LEG_EXTRAS = ("intersections", "arcs")


def plain_osrm(doc: dict) -> dict:
    """Drop the extension keys so the document looks like a stock OSRM answer."""
    for tp in doc.get("tracepoints") or []:
        if tp is not None:
            for k in TRACEPOINT_EXTRAS:
                tp.pop(k, None)
    for m in doc.get("matchings", []):
        for leg in m["legs"]:
            for k in LEG_EXTRAS:
                leg.pop(k, None)
    return doc


class OsrmStub:
    """Serve ``/match/v1/<profile>/<coords>`` on localhost until closed.

    ``mode`` is "match" (answer with the built-in matcher), "reject" (HTTP 400
    InvalidQuery) or "garbage" (HTTP 200 with a non-JSON body).
    """

    def __init__(self, net, mode: str = "match"):
        self.net = net
        self.mode = mode
        self.requests: list[str] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                stub.requests.append(self.path)
                status, body = stub.answer(self.path)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(body)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def answer(self, path: str) -> tuple[int, bytes]:
        if self.mode == "reject":
            return 400, json.dumps({"code": "InvalidQuery", "message": "bad"}).encode()
        if self.mode == "garbage":
            return 200, b"<html>not json</html>"
        parsed = urllib.parse.urlsplit(path)
        coords = urllib.parse.unquote(parsed.path.rsplit("/", 1)[1])
        query = urllib.parse.parse_qs(parsed.query)
        times = [float(t) for t in query["timestamps"][0].split(";")]
        pts = []
        for i, pair in enumerate(coords.split(";")):
            lon, lat = (float(v) for v in pair.split(","))
            pts.append(Waypoint(GeoPoint(lat, lon), times[i], i))
        try:
            mt = match_segment(self.net, TripSegment("stub", 0, pts))
        except Exception:
            doc = {"code": "NoMatch", "message": "Could not match the trace."}
            return 400, json.dumps(doc).encode()
        return 200, json.dumps(plain_osrm(to_match_response(mt, len(pts), self.net))).encode()

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def closed_port_url() -> str:
    import socket
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    return f"http://127.0.0.1:{port}"
