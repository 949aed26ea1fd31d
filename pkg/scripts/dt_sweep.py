"""Train once at dt_train, then re-evaluate the frozen model over dt = 0..95.

    python3 scripts/dt_sweep.py --out results/dt_sweep --dt 30 --x 4
"""

import argparse
import logging
from dataclasses import asdict
from pathlib import Path

from coopsteer.checkpoint import save_checkpoint
from coopsteer.data import SampleSource
from coopsteer.export import emit_plot_data, export_results
from coopsteer.harness import DT_SWEEP_VALUES, TrainConfig, fit, sweep_dt
from coopsteer.synth import synth_generate


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("results/dt_sweep"))
    p.add_argument("--frames", type=int, default=5000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--dt", type=int, default=8)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    source = SampleSource(synth_generate(args.frames, seed=args.seed, h=args.size, w=args.size))
    cfg = TrainConfig(x=args.x, dt=args.dt, epochs=args.epochs, seed=args.seed)
    model, report, (train_w, val_w) = fit(source, cfg)
    values = sorted(set(DT_SWEEP_VALUES) | {args.dt})
    table = sweep_dt(model, source, val_w, values, train_windows=train_w)

    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "model.ckpt", model, meta={"train": asdict(cfg)})
    export_results(report, args.out / "metrics.json")
    export_results(table, args.out / "sweep.csv")
    export_results(table, args.out / "sweep.json")
    emit_plot_data(table, args.out)
    emit_plot_data(report, args.out)
    for r in table.rows:
        print(f"dt={r.value:3d}  val {r.rmse_val}  {r.status}")
    print("minimum at dt =", table.best().value)


if __name__ == "__main__":
    main()
