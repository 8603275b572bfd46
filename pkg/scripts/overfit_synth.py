#!/usr/bin/env python3
"""Overfit harness: mini network on the 8-class synthetic set, 5 seeds.

Reproduces the desk-scale memorization experiment: Adam at lr 1e-3 with
per-epoch decay 0.95 must push train accuracy to >= 95% within 50 epochs for
at least 4 of 5 seeds.
"""

import argparse
import sys
import tempfile
import time

from f2cskel.harness import run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default=None, help="cache directory (default: temp)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--decay", type=float, default=0.95)
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--dataset-seed", type=int, default=1)
    args = ap.parse_args()

    workdir = args.workdir or tempfile.mkdtemp(prefix="f2c-overfit-")
    start = time.perf_counter()
    results = run_overfit(
        workdir,
        train_seeds=tuple(args.seeds),
        dataset_seed=args.dataset_seed,
        epochs=args.epochs,
        lr=args.lr,
        decay=args.decay,
        batch_size=args.batch,
        verbose=True,
    )
    reached = sum(1 for r in results if r.best_train_acc >= 0.95)
    need = max(1, len(results) - 1)
    print(f"\n{reached}/{len(results)} seeds reached 95% train accuracy "
          f"({time.perf_counter() - start:.0f}s); need >= {need}")
    return 0 if reached >= need else 1


if __name__ == "__main__":
    sys.exit(main())
