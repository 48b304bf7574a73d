"""Stop detection and per-participant trip variables."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

from .enrichment import EnrichedPoint
from .errors import ZeroDuration
from .network import Maxspeed

KMH_PER_MPH = 1.609344
CYCLEWAY_CATEGORIES = ("shared_lane", "track", "separate", "lane", "share_busway")


class StopStatus(str, enum.Enum):
    MOVING = "moving"
    STOPPED = "stopped"


@dataclass
class StopConfig:
    speed_threshold: float = 0.3  # m/s, strictly below counts as still
    duration_threshold: float = 20.0  # s, a still run must last longer than this

    def __post_init__(self):
        if not (self.speed_threshold > 0 and self.duration_threshold > 0):
            raise ValueError("stop thresholds must be positive")


def stop_mask(speeds: Sequence[float], durations: Sequence[float] | None = None,
              cfg: StopConfig | None = None) -> list[bool]:
    """True for every point inside a slow run lasting longer than the threshold.

    ``durations`` is the time each point accounts for (1 s at 1 Hz by default);
    a run's duration is their sum.
    """
    cfg = cfg or StopConfig()
    n = len(speeds)
    durations = [1.0] * n if durations is None else list(durations)
    mask = [False] * n
    i = 0
    while i < n:
        if speeds[i] >= cfg.speed_threshold:
            i += 1
            continue
        j = i
        total = 0.0
        while j < n and speeds[j] < cfg.speed_threshold:
            total += durations[j]
            j += 1
        if total > cfg.duration_threshold:
            mask[i:j] = [True] * (j - i)
        i = j
    return mask


def identify_stops(points: Sequence[EnrichedPoint], cfg: StopConfig | None = None) -> list[StopStatus]:
    """Stop status for the fixes of one matched segment, in order.

    A fix's speed is its arriving leg's distance over duration; the first fix
    has no arriving leg and borrows the speed of the leg leaving it.
    """
    speeds: list[float] = []
    for p in points:
        s = p.speed_ms
        speeds.append(math.nan if s is None else s)
    for i, s in enumerate(speeds):
        if math.isnan(s):
            speeds[i] = next((v for v in speeds[i + 1:] if not math.isnan(v)), 0.0)
    mask = stop_mask(speeds, [p.leg_duration_s for p in points], cfg)
    return [StopStatus.STOPPED if m else StopStatus.MOVING for m in mask]


def flag_stops(points: Iterable[EnrichedPoint], cfg: StopConfig | None = None) -> list[EnrichedPoint]:
    """Set ``stop_flag`` in place, one run per (trip, segment); returns the points."""
    groups: dict[tuple[str, int], list[EnrichedPoint]] = defaultdict(list)
    pts = list(points)
    for p in pts:
        groups[(p.trip_id, p.segment_index)].append(p)
    for group in groups.values():
        group.sort(key=lambda p: p.point_seq)
        for p, status in zip(group, identify_stops(group, cfg)):
            p.stop_flag = status is StopStatus.STOPPED
    return pts


def maxspeed_normalize(value: float | Maxspeed | None, unit: str | None = None) -> str:
    """Classify a speed limit as ``"20mph"``, ``"30mph"`` or ``"other"``.

    Limits in km/h count when they convert to within 1 mph of the class.
    """
    if isinstance(value, Maxspeed):
        value, unit = value.value, value.unit
    if value is None or unit is None:
        return "other"
    if unit == "mph":
        mph = value
        tol = 0.0
    elif unit == "km/h":
        mph = value / KMH_PER_MPH
        tol = 1.0
    else:
        return "other"
    for cls in (20, 30):
        if abs(mph - cls) <= tol:
            return f"{cls}mph"
    return "other"


@dataclass
class VariablesRecord:
    participant_id: str
    total_distance_m: float
    total_time_s: float
    avg_speed_ms: float
    avg_speed_kmh: float
    avg_moving_speed_kmh: float
    prop_time_20mph: float
    prop_time_30mph: float
    prop_shared_lane: float
    prop_track: float
    prop_separate: float
    prop_lane: float
    prop_share_busway: float
    signals_total: int
    signal_density_per_km: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TimeBreakdown:
    total_s: float
    stopped_s: float

    @property
    def moving_s(self) -> float:
        return self.total_s - self.stopped_s


def time_breakdown(points: Iterable[EnrichedPoint]) -> TimeBreakdown:
    total = stopped = 0.0
    for p in points:
        total += p.leg_duration_s
        if p.stop_flag:
            stopped += p.leg_duration_s
    return TimeBreakdown(total, stopped)


def derive_variables(participant_id: str, points: Iterable[EnrichedPoint],
                     stop_cfg: StopConfig | None = None) -> VariablesRecord:
    """Aggregate one participant's enriched fixes into the derived variables.

    Fixes are summed in (trip, segment, seq) order so that the result does not
    depend on input order. Points without a stop flag are flagged first.
    """
    pts = sorted(points, key=lambda p: (p.trip_id, p.segment_index, p.point_seq))
    if any(p.stop_flag is None for p in pts):
        flag_stops(pts, stop_cfg)

    distance = 0.0
    tb = time_breakdown(pts)
    by_limit = {"20mph": 0.0, "30mph": 0.0}
    by_cycleway = dict.fromkeys(CYCLEWAY_CATEGORIES, 0.0)
    signals = 0
    for p in pts:
        distance += p.leg_distance_m
        signals += p.signals_count
        cls = maxspeed_normalize(p.maxspeed_value, p.maxspeed_unit)
        if cls in by_limit:
            by_limit[cls] += p.leg_duration_s
        if p.effective_cycleway in by_cycleway:
            by_cycleway[p.effective_cycleway] += p.leg_duration_s
    total = tb.total_s
    if total <= 0:
        raise ZeroDuration(f"participant {participant_id}: no matched travel time")

    avg_ms = distance / total
    avg_kmh = (distance / 1000) / (total / 3600)
    moving = tb.moving_s
    if moving > 0:
        moving_kmh = (distance / 1000) / (moving / 3600)
    else:
        moving_kmh = math.inf if distance > 0 else 0.0
    return VariablesRecord(
        participant_id=participant_id,
        total_distance_m=distance,
        total_time_s=total,
        avg_speed_ms=avg_ms,
        avg_speed_kmh=avg_kmh,
        avg_moving_speed_kmh=moving_kmh,
        prop_time_20mph=by_limit["20mph"] / total,
        prop_time_30mph=by_limit["30mph"] / total,
        prop_shared_lane=by_cycleway["shared_lane"] / total,
        prop_track=by_cycleway["track"] / total,
        prop_separate=by_cycleway["separate"] / total,
        prop_lane=by_cycleway["lane"] / total,
        prop_share_busway=by_cycleway["share_busway"] / total,
        signals_total=signals,
        signal_density_per_km=signals / (distance / 1000) if distance > 0 else 0.0,
    )


def derive_all(points: Iterable[EnrichedPoint], stop_cfg: StopConfig | None = None) -> list[VariablesRecord]:
    """One record per participant, sorted by participant id."""
    by_participant: dict[str, list[EnrichedPoint]] = defaultdict(list)
    for p in points:
        by_participant[p.participant_id].append(p)
    if not by_participant:
        raise ZeroDuration("no matched trips to aggregate")
    return [derive_variables(pid, by_participant[pid], stop_cfg) for pid in sorted(by_participant)]


def speed_histogram(records: Sequence[VariablesRecord], bin_width_kmh: float = 1.0) -> list[tuple[str, float, float, int]]:
    """(metric, bin_low, bin_high, count) for average and moving speed."""
    rows = []
    for metric in ("avg_speed_kmh", "avg_moving_speed_kmh"):
        values = [getattr(r, metric) for r in records if math.isfinite(getattr(r, metric))]
        if not values:
            continue
        counts: dict[int, int] = defaultdict(int)
        for v in values:
            counts[math.floor(v / bin_width_kmh)] += 1
        for b in range(min(counts), max(counts) + 1):
            rows.append((metric, b * bin_width_kmh, (b + 1) * bin_width_kmh, counts.get(b, 0)))
    return rows
