#!/usr/bin/env python3
"""Directional depth-16 check at desk width: zcswish vs relu.

Deeper normalization-free stacks are where the centering mechanism should
start paying off. This runs depth 16 at width/8 for 10 desk epochs and
compares best train accuracy; it is informational, not a pass/fail gate.
"""

import argparse
import json
import time
from pathlib import Path

from actlab.cli import main as actlab_main
from actlab.data import SPLIT_FILES, write_synthetic_cifar100


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data-dir", help="CIFAR-100 binary directory (default: synthetic under --out)")
    p.add_argument("--out", default="runs/depth16_stretch")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--activations", default="relu,zcswish")
    args = p.parse_args()

    out_root = Path(args.out)
    data_dir = Path(args.data_dir) if args.data_dir else out_root / "data"
    if not (data_dir / SPLIT_FILES["train"]).exists():
        print(f"no dataset at {data_dir}, generating synthetic stand-in data")
        write_synthetic_cifar100(data_dir, train_per_class=40, test_per_class=20, num_classes=100, seed=0)

    best = {}
    for act in args.activations.split(","):
        run_dir = out_root / act
        t0 = time.perf_counter()
        rc = actlab_main(
            [
                "train", "--preset", "desk", "--activation", act, "--depth", "16",
                "--epochs", str(args.epochs), "--data-dir", str(data_dir), "--out", str(run_dir),
            ]
        )
        if rc != 0:
            raise SystemExit(f"run failed for {act}")
        s = json.loads((run_dir / "seed_42" / "summary.json").read_text())
        best[act] = s["best_train_acc"]
        print(f"{act}: best train acc {s['best_train_acc']:.1%}, best test acc {s['best_test_acc']:.1%} "
              f"({time.perf_counter() - t0:.0f}s)")

    if "zcswish" in best and "relu" in best:
        ok = best["zcswish"] >= best["relu"]
        print(f"directional check (zcswish >= relu at depth 16): {'holds' if ok else 'does not hold'} "
              f"({best['zcswish']:.1%} vs {best['relu']:.1%})")


if __name__ == "__main__":
    main()
