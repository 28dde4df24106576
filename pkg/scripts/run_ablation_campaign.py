"""Run the full ablation table and write report.csv / report.txt.

The library's `standard_suite()` is the configuration the acceptance
orderings were established on (single warm-up epoch so that removing the
external 2D supervision visibly collapses stage 2).  `--sanity` switches
to the noiseless suite, whose rows should all land within a point of
each other.

Usage:
    python3 scripts/run_ablation_campaign.py --out runs/ablation
    python3 scripts/run_ablation_campaign.py --sanity --seeds 0,1,2,3,4
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from cnslab import (ROW_ORDER, run_ablation, sanity_suite, standard_suite,
                    write_report_csv, write_report_text)


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/ablation"),
                        help="output directory (default: runs/ablation)")
    parser.add_argument("--seeds", default="0,1,2",
                        help="comma-separated scene/training seeds")
    parser.add_argument("--rows", default=",".join(ROW_ORDER),
                        help="comma-separated subset of ablation rows")
    parser.add_argument("--sanity", action="store_true",
                        help="noiseless oracles (all rows should agree)")
    parser.add_argument("--stage1-epochs", type=int, default=None,
                        help="override warm-up epochs")
    parser.add_argument("--total-epochs", type=int, default=None,
                        help="override total epochs")
    return parser.parse_args()


def main():
    args = parse_args()
    make = sanity_suite if args.sanity else standard_suite
    suite = make(seeds=tuple(int(s) for s in args.seeds.split(",")),
                 rows=tuple(r.strip() for r in args.rows.split(",")))
    overrides = {}
    if args.stage1_epochs is not None:
        overrides["stage1_epochs"] = args.stage1_epochs
    if args.total_epochs is not None:
        overrides["total_epochs"] = args.total_epochs
    if overrides:
        suite = replace(suite, train=replace(suite.train, **overrides))

    start = time.perf_counter()
    report = run_ablation(suite)
    elapsed = time.perf_counter() - start

    args.out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, args.out / "report.csv")
    write_report_text(report, args.out / "report.txt")

    print(f"{'row':<12} {'miou2d':>8} {'miou3d':>8}")
    for row in suite.rows:
        med = report.medians[row]
        print(f"{row:<12} {med['miou2d']:>8.4f} {med['miou3d']:>8.4f}")
    failures = [e for e in report.rows if e.get("error")]
    if failures:
        print(f"{len(failures)} runs failed; see {args.out / 'report.csv'}")
    print(f"{len(report.rows)} runs over seeds {suite.seeds} "
          f"in {elapsed:.1f}s -> {args.out}")


if __name__ == "__main__":
    main()
