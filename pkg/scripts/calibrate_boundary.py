"""Regenerate the frozen sequential-test boundary shipped with the package.

Run from the repository root:

    python3 scripts/calibrate_boundary.py --replications 100000 \
        --out src/evalkit/boundary_config.json

The constants are calibrated at the campaign horizon (200 paired trials) for
a grid of alphas covering the global level and the Bonferroni per-test
levels for up to six policies. Increasing replications tightens the
constants slightly; the shipped file records the run parameters so any
rerun is reproducible bit for bit.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from evalkit.synthlab import calibrate_sequential_boundary


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--horizon", type=int, default=200)
    parser.add_argument("--replications", type=int, default=100000)
    parser.add_argument("--seed", type=int, default=20260815)
    parser.add_argument("--out", type=Path, default=Path("src/evalkit/boundary_config.json"))
    parser.add_argument(
        "--report-out",
        type=Path,
        default=None,
        help="optionally also write the full calibration report",
    )
    args = parser.parse_args()

    report = calibrate_sequential_boundary(
        alpha=args.alpha,
        horizon=args.horizon,
        replications=args.replications,
        seed=args.seed,
    )
    boundary = report.to_boundary()
    boundary.save(args.out)
    if args.report_out is not None:
        report.save(args.report_out)

    print(f"wrote {args.out}")
    print(json.dumps(report.to_record()["alpha_table"], indent=2))
    print("empirical type-I at alpha", args.alpha, report.empirical_type1)
    print("power", report.empirical_power)


if __name__ == "__main__":
    main()
