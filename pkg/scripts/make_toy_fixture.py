"""Regenerate the bundled toy fixture under fixtures/toy/.

Five rides by three participants on a 6x6 synthetic grid: one pauses at a
junction for 40 s, one loses signal for 90 s and therefore splits in two.
"""

from __future__ import annotations

import argparse
import random
from pathlib import Path

from cycletrail.evaluation import write_truth_file
from cycletrail.network import parse_osm
from cycletrail.preprocess import TripSegment, write_gpx
from cycletrail.synthetic import grid_osm, random_route, simulate_ride

CONFIG = """\
# Toy run: paths are relative to this file.
input_dir = "gpx"
network = "network.osm"
output_dir = "out"
handedness = "left"
participants = "participants.csv"
truth = "truth.txt"
workers = 1

[preprocess]
max_speed_kmh = 50
gap_split_seconds = 60
min_points = 120

[matcher]
sigma_m = 4.07
beta_m = 3.0

[stops]
speed_threshold = 0.3
duration_threshold = 20.0
"""

RIDES = [
    # trip_id, participant, arcs, stops, gap (start_s, length_s)
    ("p01_a", "p01", 12, (), None),
    ("p01_b", "p01", 10, ((300.0, 40.0),), None),
    ("p02_a", "p02", 14, (), None),
    ("p02_b", "p02", 22, (), (220, 90)),
    ("p03_a", "p03", 11, (), None),
]


def build(out: Path, seed: int = 7) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "gpx").mkdir(exist_ok=True)
    osm = grid_osm(6, 6, seed=seed, oneway_fraction=0.1, signal_fraction=0.35)
    (out / "network.osm").write_bytes(osm)
    net = parse_osm(osm)
    rng = random.Random(seed)
    truth = {}
    participants = ["trip_id,participant_id"]
    for trip_id, pid, n_arcs, stops, gap in RIDES:
        route = random_route(net, rng, n_arcs)
        ride = simulate_ride(net, route, rng, speed_ms=5.0, noise_m=4.0,
                             start_time=1_700_000_000.0 + 3600 * len(participants), stops=stops)
        pts = ride.points
        if gap is None:
            truth[f"{trip_id}_0"] = ride.nodes
        else:
            start, length = gap
            pts = pts[:start] + pts[start + length:]
        (out / "gpx" / f"{trip_id}.gpx").write_bytes(write_gpx(TripSegment(trip_id, 0, pts)))
        participants.append(f"{trip_id},{pid}")
    write_truth_file(out / "truth.txt", truth)
    (out / "participants.csv").write_text("\n".join(participants) + "\n")
    (out / "config.toml").write_text(CONFIG)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "fixtures" / "toy")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    build(args.out, args.seed)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
