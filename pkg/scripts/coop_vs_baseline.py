"""Cooperative model against the single-frame and two-frame baselines under ego glare.

The lead stream is glare-free; every architecture gets the same data and budget.

    python3 scripts/coop_vs_baseline.py --out results/coop_vs_baseline --seeds 3
"""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from coopsteer.data import SampleSource
from coopsteer.harness import TrainConfig, fit
from coopsteer.synth import synth_generate

ARCHS = ("coop", "baselineA", "baselineD", "baselineE")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("results/coop_vs_baseline"))
    p.add_argument("--frames", type=int, default=1500)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--glare", type=float, default=0.15)
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--dt", type=int, default=8)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--archs", default=",".join(ARCHS))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    archs = args.archs.split(",")
    table = {a: [] for a in archs}
    for seed in range(args.seeds):
        ego = synth_generate(args.frames, seed=100 + seed, h=args.size, w=args.size, glare_prob=args.glare)
        lead = synth_generate(args.frames, seed=100 + seed, h=args.size, w=args.size)
        source = SampleSource(ego, lead)
        for arch in archs:
            cfg = TrainConfig(arch=arch, x=args.x, dt=args.dt, epochs=args.epochs, seed=seed)
            _, report, _ = fit(source, cfg)
            table[arch].append({"seed": seed, "val_rmse": report.splits["val"].rmse, "val_mae": report.splits["val"].mae})
            print(arch, seed, report.splits["val"].rmse, flush=True)

    summary = {a: {"median_val_rmse": float(np.median([r["val_rmse"] for r in rows])), "runs": rows}
               for a, rows in table.items()}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "summary.json").write_text(json.dumps({"config": vars(args) | {"out": str(args.out)},
                                                       "results": summary}, indent=2, sort_keys=True) + "\n")
    for a, s in summary.items():
        print(f"{a:10s} median val RMSE {s['median_val_rmse']:.4f}")


if __name__ == "__main__":
    main()
