"""CSV layouts of the four output tables and their readers/writers.

Floats are written with ``repr`` so that reading a table back yields the
exact values that were written.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import fields
from pathlib import Path
from typing import Iterable, Sequence

from .enrichment import EnrichedPoint, TravelDirection
from .geo import GeoPoint, Waypoint
from .matcher import MatchedTrip
from .metrics import VariablesRecord
from .preprocess import TripSegment, format_timestamp, parse_timestamp

CLEANED_TRIP = "cleaned_trip"
MATCHED_TRIP = "matched_trip"
TRIP_ATTRIBUTES = "trip_atrributes"
TRIP_ATTRIBUTES_ALIAS = "trip_attributes"
VARIABLES = "variables"

CLEANED_TRIP_COLUMNS = ["trip_id", "segment_index", "point_seq", "lat", "lon", "time"]
MATCHED_TRIP_COLUMNS = [
    "trip_id", "segment_index", "point_seq", "lat", "lon", "way_id", "offset_m",
    "leg_distance_m", "leg_duration_s",
]
TRIP_ATTRIBUTES_COLUMNS = [f.name for f in fields(EnrichedPoint)]
VARIABLES_COLUMNS = VariablesRecord.columns()


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _opt(cast, s: str):
    return None if s == "" else cast(s)


# --------------------------------------------------------------------------
# cleaned_trip


def cleaned_rows(segments: Iterable[TripSegment]):
    for seg in segments:
        for i, wp in enumerate(seg.points):
            yield [seg.trip_id, seg.segment_index, i, wp.lat, wp.lon, format_timestamp(wp.time)]


def read_cleaned_trip(path: str | Path) -> list[TripSegment]:
    segs: dict[tuple[str, int], list[tuple[int, Waypoint]]] = {}
    for r in read_table(path):
        key = (r["trip_id"], int(r["segment_index"]))
        seq = int(r["point_seq"])
        wp = Waypoint(GeoPoint(float(r["lat"]), float(r["lon"])), parse_timestamp(r["time"]), seq)
        segs.setdefault(key, []).append((seq, wp))
    return [
        TripSegment(tid, idx, [wp for _, wp in sorted(pts, key=lambda x: x[0])])
        for (tid, idx), pts in sorted(segs.items())
    ]


# --------------------------------------------------------------------------
# matched_trip


def matched_rows(mt: MatchedTrip):
    for i, p in enumerate(mt.points):
        leg = mt.legs[i - 1] if i > 0 else None
        yield [
            mt.trip_id, mt.segment_index, p.point_seq, p.snapped.lat, p.snapped.lon, p.way_id,
            p.offset_m, leg.distance_m if leg else 0.0, leg.duration_s if leg else 0.0,
        ]


# --------------------------------------------------------------------------
# trip_atrributes


_CASTS = {
    "segment_index": int, "point_seq": int, "lat": float, "lon": float, "offset_m": float,
    "leg_distance_m": float, "leg_duration_s": float, "signals_count": int,
}
_OPTIONAL = {"way_id": int, "maxspeed_value": float, "lanes": int}


def attribute_rows(points: Iterable[EnrichedPoint]):
    for p in points:
        yield [getattr(p, c) for c in TRIP_ATTRIBUTES_COLUMNS]


def read_trip_attributes(path: str | Path) -> list[EnrichedPoint]:
    out = []
    for r in read_table(path):
        kw = {}
        for c in TRIP_ATTRIBUTES_COLUMNS:
            s = r[c]
            if c in _CASTS:
                kw[c] = _CASTS[c](s)
            elif c in _OPTIONAL:
                kw[c] = _opt(_OPTIONAL[c], s)
            elif c == "direction":
                kw[c] = TravelDirection(s)
            elif c == "stop_flag":
                kw[c] = None if s == "" else s == "1"
            elif c in ("trip_id", "participant_id", "effective_cycleway", "node_sequence_digest"):
                kw[c] = s
            else:
                kw[c] = _opt(str, s)
        out.append(EnrichedPoint(**kw))
    return out


# --------------------------------------------------------------------------
# variables


def variables_rows(records: Iterable[VariablesRecord]):
    for rec in records:
        yield [getattr(rec, c) for c in VARIABLES_COLUMNS]


def read_variables(path: str | Path) -> list[VariablesRecord]:
    out = []
    for r in read_table(path):
        kw = {c: float(r[c]) for c in VARIABLES_COLUMNS if c not in ("participant_id", "signals_total")}
        kw["participant_id"] = r["participant_id"]
        kw["signals_total"] = int(r["signals_total"])
        out.append(VariablesRecord(**kw))
    return out
