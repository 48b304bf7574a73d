"""Built-in matcher throughput on synthetic 1 Hz rides, in points per second."""

from __future__ import annotations

import argparse

from cycletrail.synthetic import recovery_trial

REFERENCE_POINTS_PER_S = 83.9


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rides", type=int, default=20)
    ap.add_argument("--arcs", type=int, default=30, help="route length in grid blocks")
    ap.add_argument("--grid", type=int, default=12, help="grid size (rows = columns)")
    args = ap.parse_args()

    points = seconds = 0.0
    for seed in range(args.rides):
        r = recovery_trial(seed, n_arcs=args.arcs, rows=args.grid, cols=args.grid)
        points += r.points
        seconds += r.match_seconds
    rate = points / seconds
    print(f"{int(points)} points matched in {seconds:.2f} s: {rate:.1f} points/s "
          f"({rate / REFERENCE_POINTS_PER_S:.1f}x the {REFERENCE_POINTS_PER_S} points/s reference)")


if __name__ == "__main__":
    main()
