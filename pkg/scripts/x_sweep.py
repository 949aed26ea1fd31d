"""RMSE vs x on the synthetic road (desk-scale analogue of the x sweep).

    python3 scripts/x_sweep.py --out results/x_sweep --values 1,2,4,8 --jobs 1
"""

import argparse
import logging
from pathlib import Path

from coopsteer.data import SampleSource
from coopsteer.export import emit_plot_data, export_results
from coopsteer.harness import X_SWEEP_VALUES, TrainConfig, sweep_x
from coopsteer.synth import synth_generate


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("results/x_sweep"))
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--glare", type=float, default=0.15, help="glare probability on ego frames")
    p.add_argument("--values", default=",".join(map(str, X_SWEEP_VALUES)))
    p.add_argument("--dt", type=int, default=8)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    ego = synth_generate(args.frames, seed=args.seed, h=args.size, w=args.size, glare_prob=args.glare)
    lead = synth_generate(args.frames, seed=args.seed, h=args.size, w=args.size)
    base = TrainConfig(dt=args.dt, epochs=args.epochs, seed=args.seed)
    table = sweep_x(SampleSource(ego, lead), base, [int(v) for v in args.values.split(",")], jobs=args.jobs)

    args.out.mkdir(parents=True, exist_ok=True)
    export_results(table, args.out / "sweep.csv")
    export_results(table, args.out / "sweep.json")
    emit_plot_data(table, args.out)
    for r in table.rows:
        print(f"x={r.value:3d}  train {r.rmse_train}  val {r.rmse_val}  {r.status}")


if __name__ == "__main__":
    main()
