"""Stage orchestration: preprocess, match, enrich, derive and evaluate.

Each stage reads the previous stage's files from ``output_dir`` and writes
its own, so any stage can be re-run on its own. Rows are always written in
(trip_id, segment_index, point_seq) order whatever the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .enrichment import Handedness, enrich_trip
from .errors import (
    ConfigError, CycleTrailError, EmptyTrack, InputError, MalformedGpx, MissingStageOutput,
    NetworkLoadFailure, NoInput, UnknownArc,
)
from .evaluation import evaluate_against_truth, read_truth_file, total_report, write_report
from .matcher import MatchedTrip, MatcherConfig, match_segment
from .metrics import StopConfig, derive_all, flag_stops, speed_histogram
from .network import RoadNetwork, Router, load_network
from .osrm import OsrmMatchClient, load_match_document, matched_geometry, save_match_document
from .overpass import OverpassClient
from .preprocess import (
    Boundary, PreprocessConfig, PreprocessReport, StationaryTrim, TripSegment, parse_gpx,
    preprocess, write_gpx,
)
from . import tables

log = logging.getLogger(__name__)


@dataclass
class BackendConfig:
    kind: str = "builtin"  # or "remote"
    endpoint: str | None = None
    profile: str = "bike"
    timeout_s: float = 30.0
    max_points: int = 100

    def __post_init__(self):
        if self.kind not in ("builtin", "remote"):
            raise ConfigError(f"backend.kind must be 'builtin' or 'remote', not {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("backend.endpoint is required for the remote backend")


@dataclass
class OverpassConfig:
    enabled: bool = False
    endpoint: str | None = None  # falls back to $CYCLETRAIL_OVERPASS_URL, then the public server
    requests_per_minute: float = 30.0


@dataclass
class RunConfig:
    input_dir: Path
    network_path: Path
    output_dir: Path
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    handedness: Handedness = Handedness.LEFT
    backend: BackendConfig = field(default_factory=BackendConfig)
    overpass: OverpassConfig = field(default_factory=OverpassConfig)
    stops: StopConfig = field(default_factory=StopConfig)
    workers: int = 1
    participants_path: Path | None = None
    truth_path: Path | None = None
    directed_evaluation: bool = True
    min_file_bytes: int = 0  # GPX files smaller than this are skipped unread
    source: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "RunConfig":
        base = Path(base_dir)

        def resolve(v):
            return None if v is None else (base / v).resolve()

        def section(name: str, allowed: type | tuple[str, ...]) -> dict:
            sec = dict(doc.get(name, {}))
            names = allowed if isinstance(allowed, tuple) else tuple(f.name for f in fields(allowed))
            unknown = set(sec) - set(names)
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
            return sec

        try:
            for key in ("input_dir", "network", "output_dir"):
                if key not in doc:
                    raise ConfigError(f"config is missing '{key}'")
            pre = section("preprocess", ("max_speed_kmh", "gap_split_seconds", "resample_hz",
                                         "min_points", "stationary_speed_ms", "boundary", "bbox",
                                         "min_file_bytes"))
            boundary = None
            if "boundary" in pre:
                boundary = Boundary.from_geojson(json.loads(resolve(pre.pop("boundary")).read_text()))
            elif "bbox" in pre:
                boundary = Boundary.from_bbox(*pre.pop("bbox"))
            trim = StationaryTrim(pre.pop("stationary_speed_ms", 0.3))
            min_bytes = int(pre.pop("min_file_bytes", 0))
            pcfg = PreprocessConfig(boundary=boundary, stationary_trim=trim, **pre)
            mcfg = MatcherConfig(**section("matcher", MatcherConfig))
            stops = StopConfig(**section("stops", StopConfig))
            backend = BackendConfig(**section("backend", BackendConfig))
            overpass = OverpassConfig(**section("overpass", OverpassConfig))
            ev = section("evaluation", ("directed", "truth"))
            return cls(
                input_dir=resolve(doc["input_dir"]),
                network_path=resolve(doc["network"]),
                output_dir=resolve(doc["output_dir"]),
                preprocess=pcfg, matcher=mcfg,
                handedness=Handedness(doc.get("handedness", "left")),
                backend=backend, overpass=overpass, stops=stops,
                workers=int(doc.get("workers", 1)),
                participants_path=resolve(doc.get("participants")),
                truth_path=resolve(ev.get("truth", doc.get("truth"))),
                directed_evaluation=bool(ev.get("directed", True)),
                min_file_bytes=min_bytes,
                source=doc,
            )
        except CycleTrailError:
            raise
        except (TypeError, ValueError, KeyError, OSError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def snapshot(self) -> dict:
        """JSON-safe view of the resolved configuration."""
        def clean(v):
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, Handedness):
                return v.value
            if isinstance(v, Boundary):
                return {"rings": [[list(p) for p in r] for r in v.rings]}
            if hasattr(v, "__dataclass_fields__"):
                return {f.name: clean(getattr(v, f.name)) for f in fields(v) if f.name != "source"}
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return clean(self)


# --------------------------------------------------------------------------
# file layout


CLEANED_DIR = "cleaned"
MATCHED_DIR = "matched"
MANIFEST = "manifest.json"
EVALUATION = "evaluation.csv"
SPEED_HISTOGRAM = "speed_histogram.csv"


def table_path(cfg: RunConfig, name: str) -> Path:
    return cfg.output_dir / f"{name}.csv"


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingStageOutput(f"required input {path} does not exist; run the earlier stage first")
    return path


def _update_manifest(cfg: RunConfig, stage: str, fragment: dict) -> dict:
    path = cfg.output_dir / MANIFEST
    manifest: dict[str, Any] = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except ValueError:
            manifest = {}
    manifest["tool_version"] = __version__
    manifest["config"] = cfg.snapshot()
    manifest.setdefault("stages", {})[stage] = fragment
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return fragment


def _pool_map(fn: Callable, items: list, workers: int, initializer=None, initargs=()) -> list:
    """``map`` in input order, in worker processes when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(min(workers, len(items)), initializer=initializer, initargs=initargs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _load_network(cfg: RunConfig) -> RoadNetwork:
    try:
        return load_network(cfg.network_path)
    except (OSError, InputError) as exc:
        raise NetworkLoadFailure(f"cannot load network {cfg.network_path}: {exc}") from exc


# --------------------------------------------------------------------------
# preprocess


def _preprocess_file(job: tuple[Path, PreprocessConfig, int]):
    path, pcfg, min_bytes = job
    trip_id = path.stem
    size = path.stat().st_size
    if size < min_bytes:
        return trip_id, None, None, f"{path.name}: {size} bytes, below min_file_bytes; skipped"
    try:
        traj = parse_gpx(path.read_bytes(), trip_id)
    except (MalformedGpx, EmptyTrack) as exc:
        return trip_id, None, None, f"{path.name}: {exc}"
    segments, report = preprocess(traj, pcfg)
    return trip_id, segments, report, None


def cmd_preprocess(cfg: RunConfig) -> dict:
    """GPX files in, cleaned segment GPX files and cleaned_trip.csv out."""
    t0 = time.perf_counter()
    if not cfg.input_dir.is_dir():
        raise NoInput(f"input directory {cfg.input_dir} does not exist")
    files = sorted(p for p in cfg.input_dir.iterdir() if p.is_file() and p.suffix.lower() == ".gpx")
    if not files:
        raise NoInput(f"no .gpx files in {cfg.input_dir}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out_dir = cfg.output_dir / CLEANED_DIR
    out_dir.mkdir(exist_ok=True)
    for old in out_dir.glob("*.gpx"):
        old.unlink()

    results = _pool_map(_preprocess_file, [(p, cfg.preprocess, cfg.min_file_bytes) for p in files],
                        cfg.workers)
    warnings: list[str] = []
    drops: Counter = Counter()
    added: Counter = Counter()
    reports: list[PreprocessReport] = []
    segments: list[TripSegment] = []
    skipped = 0
    for trip_id, segs, report, warning in results:
        if warning is not None:
            warnings.append(warning)
            skipped += 1
            continue
        reports.append(report)
        drops["untimed"] += report.untimed_dropped
        for s in report.stages:
            if s.dropped >= 0:
                drops[s.stage] += s.dropped
            else:  # resampling fills short holes
                added[s.stage] += -s.dropped
        segments.extend(segs)
    segments.sort(key=lambda s: (s.trip_id, s.segment_index))
    for seg in segments:
        (out_dir / f"{seg.key}.gpx").write_bytes(write_gpx(seg))
    tables.write_table(table_path(cfg, tables.CLEANED_TRIP), tables.CLEANED_TRIP_COLUMNS,
                       tables.cleaned_rows(segments))

    points_in = sum(r.raw_points for r in reports)
    points_out = sum(len(s) for s in segments)
    for w in warnings:
        log.warning(w)
    return _update_manifest(cfg, "preprocess", {
        "files_in": len(files),
        "files_skipped": skipped,
        "points_in": points_in,
        "points_out": points_out,
        "points_dropped": dict(sorted(drops.items())),
        "points_added": dict(sorted(added.items())),
        "splits": sum(r.splits for r in reports),
        "short_segments": sum(r.short_segments for r in reports),
        "segments_out": len(segments),
        "trips": [r.as_dict() for r in reports],
        "warnings": warnings,
        "wall_time_s": time.perf_counter() - t0,
    })


# --------------------------------------------------------------------------
# match

_WORKER: dict[str, Any] = {}


def _init_matcher(network_path: Path, mcfg: MatcherConfig):
    net = load_network(network_path)
    _WORKER.update(net=net, router=Router(net), cfg=mcfg)


def _match_builtin(seg: TripSegment) -> MatchedTrip:
    return match_segment(_WORKER["net"], seg, _WORKER["cfg"], _WORKER["router"])


def _geojson(net: RoadNetwork, mt: MatchedTrip) -> dict:
    return {
        "type": "Feature",
        "properties": {
            "trip_id": mt.trip_id, "segment_index": mt.segment_index,
            "matched_points": len(mt.points), "discarded_points": len(mt.discarded),
            "distance_m": sum(leg.distance_m for leg in mt.legs),
        },
        "geometry": {"type": "LineString", "coordinates": matched_geometry(net, mt)},
    }


def cmd_match(cfg: RunConfig) -> dict:
    """Match every cleaned segment; writes per-segment JSON and GeoJSON plus matched_trip.csv."""
    t0 = time.perf_counter()
    segments = tables.read_cleaned_trip(_require(table_path(cfg, tables.CLEANED_TRIP)))
    net = _load_network(cfg)
    out_dir = cfg.output_dir / MATCHED_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    for old in list(out_dir.glob("*.json")) + list(out_dir.glob("*.geojson")):
        old.unlink()

    t_match = time.perf_counter()
    if cfg.backend.kind == "builtin":
        if cfg.workers > 1 and len(segments) > 1:
            trips = _pool_map(_match_builtin, segments, cfg.workers, _init_matcher,
                              (cfg.network_path, cfg.matcher))
        else:
            router = Router(net)
            trips = [match_segment(net, s, cfg.matcher, router) for s in segments]
        for seg, mt in zip(segments, trips):
            save_match_document(out_dir / f"{seg.key}.json", mt, len(seg), net, backend="builtin")
    else:
        client = OsrmMatchClient(cfg.backend.endpoint, cfg.backend.profile, cfg.backend.timeout_s,
                                 cfg.backend.max_points, max_in_flight=cfg.workers)
        with ThreadPoolExecutor(cfg.workers) as ex:
            trips = list(ex.map(lambda s: client.match(s, net, out_dir), segments))
    match_time = time.perf_counter() - t_match

    warnings = []
    rows = []
    for seg, mt in zip(segments, trips):
        if not mt.points:
            warnings.append(f"{seg.key}: no match")
            continue
        (out_dir / f"{seg.key}.geojson").write_text(json.dumps(_geojson(net, mt)) + "\n")
        rows.extend(tables.matched_rows(mt))
    tables.write_table(table_path(cfg, tables.MATCHED_TRIP), tables.MATCHED_TRIP_COLUMNS, rows)
    points_in = sum(len(s) for s in segments)
    matched = sum(len(mt.points) for mt in trips)
    for w in warnings:
        log.warning(w)
    return _update_manifest(cfg, "match", {
        "backend": cfg.backend.kind,
        "segments_in": len(segments),
        "segments_matched": sum(1 for mt in trips if mt.points),
        "points_in": points_in,
        "points_out": matched,
        "points_discarded": points_in - matched,
        "warnings": warnings,
        "match_time_s": match_time,
        "points_per_second": points_in / match_time if match_time > 0 else None,
        "wall_time_s": time.perf_counter() - t0,
    })


# --------------------------------------------------------------------------
# enrich


def read_participants(path: Path | None) -> dict[str, str]:
    """trip_id -> participant_id from a two-column CSV (header required)."""
    if path is None:
        return {}
    if not path.exists():
        raise ConfigError(f"participants file {path} does not exist")
    with open(path, newline="") as fh:
        return {r["trip_id"]: r["participant_id"] for r in csv.DictReader(fh)}


def participant_for(trip_id: str, mapping: dict[str, str]) -> str:
    if trip_id in mapping:
        return mapping[trip_id]
    return trip_id.split("_", 1)[0]


def load_matches(cfg: RunConfig, net: RoadNetwork | None) -> list[MatchedTrip]:
    _require(table_path(cfg, tables.MATCHED_TRIP))
    trips = [load_match_document(p, net) for p in (cfg.output_dir / MATCHED_DIR).glob("*.json")]
    trips.sort(key=lambda mt: (mt.trip_id, mt.segment_index))
    return trips


def cmd_enrich(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    net = _load_network(cfg)
    trips = load_matches(cfg, net)
    mapping = read_participants(cfg.participants_path)
    backfill = None
    if cfg.overpass.enabled:
        backfill = OverpassClient(cfg.overpass.endpoint, requests_per_minute=cfg.overpass.requests_per_minute)
    warnings: list[str] = []
    points = []
    for mt in trips:
        points.extend(enrich_trip(net, mt, cfg.handedness, participant_for(mt.trip_id, mapping),
                                  backfill, warnings))
    flag_stops(points, cfg.stops)
    for name in (tables.TRIP_ATTRIBUTES, tables.TRIP_ATTRIBUTES_ALIAS):
        tables.write_table(table_path(cfg, name), tables.TRIP_ATTRIBUTES_COLUMNS,
                           tables.attribute_rows(points))
    for w in warnings:
        log.warning(w)
    return _update_manifest(cfg, "enrich", {
        "segments_in": len(trips),
        "points_out": len(points),
        "stopped_points": sum(1 for p in points if p.stop_flag),
        "warnings": warnings,
        "wall_time_s": time.perf_counter() - t0,
    })


# --------------------------------------------------------------------------
# derive / evaluate


def cmd_derive(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    points = tables.read_trip_attributes(_require(table_path(cfg, tables.TRIP_ATTRIBUTES)))
    records = derive_all(points, cfg.stops)
    tables.write_table(table_path(cfg, tables.VARIABLES), tables.VARIABLES_COLUMNS,
                       tables.variables_rows(records))
    tables.write_table(cfg.output_dir / SPEED_HISTOGRAM, ["metric", "bin_low_kmh", "bin_high_kmh", "count"],
                       speed_histogram(records))
    return _update_manifest(cfg, "derive", {
        "points_in": len(points),
        "participants": len(records),
        "wall_time_s": time.perf_counter() - t0,
    })


def cmd_evaluate(cfg: RunConfig, truth_path: Path | None = None) -> dict:
    """Route-difference report for every matched segment that has a truth route."""
    t0 = time.perf_counter()
    truth_path = truth_path or cfg.truth_path
    if truth_path is None:
        raise ConfigError("no truth file given (config 'truth' or --truth)")
    truth = read_truth_file(_require(Path(truth_path)))
    net = _load_network(cfg)
    trips = {mt.key: mt for mt in load_matches(cfg, net)}
    reports, warnings = [], []
    for key, mt in trips.items():
        if key not in truth:
            continue
        if not mt.points:
            warnings.append(f"{key}: unmatched, not evaluated")
            continue
        try:
            reports.append(evaluate_against_truth(net, mt, truth[key], cfg.directed_evaluation))
        except UnknownArc as exc:
            warnings.append(f"{key}: {exc}")
    missing = sorted(set(truth) - set(trips))
    warnings.extend(f"{key}: in truth file but not matched" for key in missing)
    write_report(cfg.output_dir / EVALUATION, reports)
    for w in warnings:
        log.warning(w)
    total = None
    if reports:
        total = asdict(total_report(reports))
    return _update_manifest(cfg, "evaluate", {
        "segments_evaluated": len(reports),
        "total": total,
        "warnings": warnings,
        "wall_time_s": time.perf_counter() - t0,
    })


def cmd_pipeline(cfg: RunConfig) -> dict:
    """All stages in order; evaluation only when a truth file is configured."""
    out = {
        "preprocess": cmd_preprocess(cfg),
        "match": cmd_match(cfg),
        "enrich": cmd_enrich(cfg),
        "derive": cmd_derive(cfg),
    }
    if cfg.truth_path is not None:
        out["evaluate"] = cmd_evaluate(cfg)
    return out
