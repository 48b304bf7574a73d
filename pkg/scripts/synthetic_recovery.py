"""Match noisy synthetic rides on seeded grids and report the route-difference error."""

from __future__ import annotations

import argparse
import statistics

from cycletrail.synthetic import recovery_trial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--noise", type=float, default=5.0, help="GPS noise sigma in meters")
    ap.add_argument("--arcs", type=int, default=15, help="route length in grid blocks")
    ap.add_argument("--threshold", type=float, default=10.0, help="error rate counted as a success")
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args()

    results = []
    for seed in range(args.first_seed, args.first_seed + args.trials):
        r = recovery_trial(seed, noise_m=args.noise, n_arcs=args.arcs)
        results.append(r)
        print(f"seed {seed:4d}  points {r.points:4d}  error {r.error_pct:6.2f}%")
    errors = [r.error_pct for r in results]
    good = sum(e <= args.threshold for e in errors)
    print(f"\n{good}/{len(results)} trials at or below {args.threshold:g}% "
          f"(mean {statistics.mean(errors):.2f}%, median {statistics.median(errors):.2f}%, max {max(errors):.2f}%)")


if __name__ == "__main__":
    main()
