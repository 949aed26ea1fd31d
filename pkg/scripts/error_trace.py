"""Per-frame prediction error of a trained model over a whole synthetic drive.

    python3 scripts/error_trace.py --out results/trace --glare 0.15
"""

import argparse
import logging
from pathlib import Path

from coopsteer.data import SampleSource
from coopsteer.export import emit_plot_data, export_results
from coopsteer.harness import TrainConfig, error_trace, fit
from coopsteer.synth import synth_generate


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("results/trace"))
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--glare", type=float, default=0.0)
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--dt", type=int, default=8)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    ego = synth_generate(args.frames, seed=args.seed, h=args.size, w=args.size, glare_prob=args.glare)
    lead = synth_generate(args.frames, seed=args.seed, h=args.size, w=args.size)
    source = SampleSource(ego, lead)
    model, _, _ = fit(source, TrainConfig(x=args.x, dt=args.dt, epochs=args.epochs, seed=args.seed))
    trace = error_trace(model, source, args.x, args.dt)

    args.out.mkdir(parents=True, exist_ok=True)
    export_results(trace, args.out / "trace.csv")
    export_results(trace, args.out / "trace.json")
    emit_plot_data(trace, args.out)
    print(trace.summary())


if __name__ == "__main__":
    main()
