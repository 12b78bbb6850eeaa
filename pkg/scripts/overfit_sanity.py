#!/usr/bin/env python3
"""Sanity run: memorize 16 synthetic images with the full model.

A healthy build reaches train Dice >= 0.95 in roughly 240 epochs (about
half a minute on one CPU core).  If this stalls near zero the optimizer
settings or the fusion stage are broken; see tests/test_acceptance.py for
the pinned thresholds.
"""

import argparse
import time
from pathlib import Path

from causalseg.config import TrainConfig
from causalseg.train import evaluate_model, fit


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/overfit", help="artifact directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--target-dice", type=float, default=0.95)
    args = parser.parse_args()

    cfg = TrainConfig(n_samples=16, size=32, batch=8, epochs=args.epochs, k=16,
                      augment=False, lr=0.07, weight_decay=0.0,
                      schedule="constant", seed=args.seed).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    start = time.time()
    result = fit(cfg, csv_path=out / "metrics.csv",
                 checkpoint_path=out / "model.ckpt",
                 log=print, stop_at_dice=args.target_dice)
    elapsed = time.time() - start

    _, train_mean = evaluate_model(result.model, result.train_records, cfg)
    _, test_mean = evaluate_model(result.model, result.test_records, cfg)
    epochs_used = result.history[-1].epoch + 1
    verdict = "OK" if train_mean["dice"] >= args.target_dice else "STALLED"
    print(f"\n{verdict}: train dice {train_mean['dice']:.4f} "
          f"(test {test_mean['dice']:.4f}) after {epochs_used} epochs, {elapsed:.0f}s")
    print(f"artifacts in {out}/")
    return 0 if verdict == "OK" else 1


if __name__ == "__main__":
    raise SystemExit(main())
