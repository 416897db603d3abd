#!/usr/bin/env python3
"""Run one experiment matrix end to end (collect -> train -> evaluate -> report).

Matrices:
    difficulty     canonical-trained policies evaluated per variation factor
    training-sets  canonical-only vs replay-augmented vs all-factor training data
    aug-sweep      replay augmentation budget T in {2, 6, 10}
    ablation       modality masks (full, no-vision, no-touch, ..., prop-only)

`--desk-scale` uses the reduced budget (50 demos, 2000 steps, 3 seeds) that the
acceptance thresholds are stated against; the default is the full budget.

Example:
    python3 scripts/run_experiment.py --matrix difficulty --desk-scale \
        --out runs/difficulty
"""

from __future__ import annotations

import argparse
from pathlib import Path

from pegbench.simcore import SimConfig
from pegbench.trainer import TrainConfig, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument(
        "--matrix",
        required=True,
        choices=["difficulty", "training-sets", "aug-sweep", "ablation"],
    )
    ap.add_argument("--desk-scale", action="store_true")
    ap.add_argument("--out", required=True, help="output directory")
    args = ap.parse_args()

    train_config = TrainConfig.desk() if args.desk_scale else TrainConfig()
    report = run_experiment(
        args.matrix, Path(args.out), train_config=train_config, sim_config=SimConfig()
    )
    for row in report.aggregate():
        print(row)
    print(f"report written under {args.out}/report")


if __name__ == "__main__":
    main()
