#!/usr/bin/env python3
"""Run the desk preset for all four activations and print one comparison table.

Uses real CIFAR-100 binaries if --data-dir (or ACTLAB_DATA_DIR) points at
them; otherwise generates synthetic stand-in data under the output root.
"""

import argparse
import json
import time
from pathlib import Path

from actlab.cli import main as actlab_main
from actlab.data import SPLIT_FILES, write_synthetic_cifar100
from actlab.trainer import AGGREGATE_HEADER, format_aggregate_row

ACTIVATIONS = ["relu", "gelu", "swish", "zcswish"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data-dir", help="CIFAR-100 binary directory (default: synthetic under --out)")
    p.add_argument("--out", default="runs/desk_suite")
    p.add_argument("--epochs", type=int, default=None, help="override the preset's epoch count")
    args = p.parse_args()

    out_root = Path(args.out)
    data_dir = Path(args.data_dir) if args.data_dir else out_root / "data"
    if not (data_dir / SPLIT_FILES["train"]).exists():
        print(f"no dataset at {data_dir}, generating synthetic stand-in data")
        write_synthetic_cifar100(data_dir, train_per_class=40, test_per_class=20, num_classes=100, seed=0)

    rows = []
    for act in ACTIVATIONS:
        run_dir = out_root / act
        t0 = time.perf_counter()
        argv = ["train", "--preset", "desk", "--activation", act, "--data-dir", str(data_dir), "--out", str(run_dir)]
        if args.epochs is not None:
            argv += ["--epochs", str(args.epochs)]
        rc = actlab_main(argv)
        if rc != 0:
            raise SystemExit(f"run failed for {act}")
        summary = json.loads((run_dir / "seed_42" / "summary.json").read_text())
        ratio = summary["final_train_loss"] / summary["initial_train_loss"]
        rows.append((act, summary, ratio, time.perf_counter() - t0))

    print()
    print(AGGREGATE_HEADER)
    for act, s, ratio, dt in rows:
        agg = json.loads((out_root / act / "summary.json").read_text())["aggregate"]
        print(format_aggregate_row(act, agg))
    print()
    print(f"{'activation':<12}{'loss ratio':>12}{'best train %':>14}{'best test %':>13}{'nonfinite':>11}{'secs':>7}")
    for act, s, ratio, dt in rows:
        print(
            f"{act:<12}{ratio:>12.4f}{s['best_train_acc'] * 100:>14.2f}{s['best_test_acc'] * 100:>13.2f}"
            f"{s['nonfinite_steps']:>11}{dt:>7.0f}"
        )


if __name__ == "__main__":
    main()
