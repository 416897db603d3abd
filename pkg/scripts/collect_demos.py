#!/usr/bin/env python3
"""Collect scripted-expert demonstrations into a dataset directory.

Equivalent to `pegbench collect`, kept as a script so a collection run can be
edited/instrumented without touching the installed CLI.

Example:
    python3 scripts/collect_demos.py --n 50 --out runs/demos-canonical
    python3 scripts/collect_demos.py --n 50 --variations grasp,shape --split train \
        --out runs/demos-grasp-shape
"""

from __future__ import annotations

import argparse
from pathlib import Path

from pegbench.dataset import Dataset, collect_demos, save
from pegbench.rollout import expert_policy
from pegbench.simcore import SimConfig
from pegbench.variations import Split, parse_kinds


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=50, help="number of demos to record")
    ap.add_argument("--seed", type=int, default=0, help="seed of the first episode")
    ap.add_argument(
        "--variations",
        default="",
        help="comma list of factors (grasp,shape,body,scene,camera,noise); empty = canonical",
    )
    ap.add_argument("--split", choices=["train", "eval"], default="train")
    ap.add_argument("--out", required=True, help="dataset directory to create")
    args = ap.parse_args()

    kinds = parse_kinds(args.variations)
    split = Split(args.split) if kinds else Split.CANONICAL
    config = SimConfig()
    demos = collect_demos(
        expert_policy(config), args.n, kinds, split, config, start_seed=args.seed
    )
    save(Dataset(demos), Path(args.out))
    rate = sum(d.success for d in demos) / max(len(demos), 1)
    print(f"wrote {len(demos)} demos to {args.out} (success rate {rate:.2f})")


if __name__ == "__main__":
    main()
