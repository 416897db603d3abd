#!/usr/bin/env python3
"""Print a summary of a demonstration dataset directory.

Shows per-source counts, active variation factors, success rate, and episode
length statistics — the quick sanity pass before training on a collection or
augmentation run.

Example:
    python3 scripts/inspect_dataset.py runs/demos-canonical
"""

from __future__ import annotations

import argparse
from collections import Counter
from pathlib import Path

import numpy as np

from pegbench.dataset import load


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("dataset", help="dataset directory (contains manifest.json)")
    args = ap.parse_args()

    dataset = load(Path(args.dataset))
    demos = dataset.demos
    if not demos:
        print("dataset is empty")
        return

    sources = Counter(d.source for d in demos)
    factors = Counter(
        ",".join(sorted(k.value for k in d.spec.active)) or "canonical" for d in demos
    )
    steps = np.array([d.steps for d in demos])
    successes = sum(d.success for d in demos)

    print(f"{len(demos)} demos in {args.dataset}")
    print(f"  success: {successes}/{len(demos)} ({successes / len(demos):.2%})")
    print(f"  steps:   mean {steps.mean():.1f}, min {steps.min()}, max {steps.max()}")
    print("  sources:")
    for name, count in sorted(sources.items()):
        print(f"    {name}: {count}")
    print("  variation factors:")
    for name, count in sorted(factors.items()):
        print(f"    {name}: {count}")


if __name__ == "__main__":
    main()
