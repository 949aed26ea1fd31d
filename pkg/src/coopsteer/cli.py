"""Command-line entry point: ``coopsteer <command> [flags]``.

Exit codes
----------
0  success, all artifacts written
1  unexpected internal error
2  usage or configuration error (bad flags, missing checkpoint, infeasible x/dt)
3  numeric error or training divergence (last good checkpoint is still written)
4  data error (malformed CSV, unreadable images)
5  I/O error writing outputs
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SampleSource, load_udacity_csv
from .errors import (
    ConfigurationError,
    FormatError,
    IngestionError,
    NumericError,
    TrainingDivergedError,
    UsageError,
)
from .export import emit_plot_data, export_results
from .harness import (
    X_SWEEP_VALUES,
    MetricsReport,
    TrainConfig,
    error_trace,
    evaluate,
    fit,
    prepare_split,
    sweep_dt,
    sweep_x,
)
from .models import ARCHS, SteeringModel
from .synth import export_dataset, synth_generate

log = logging.getLogger("coopsteer")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_NUMERIC, EXIT_DATA, EXIT_IO = 0, 1, 2, 3, 4, 5

CSV_NAMES = ("driving_log.csv", "interpolated.csv")


# -- helpers ----------------------------------------------------------------
def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


class Manifest:
    """manifest.json, written when a run starts and rewritten when it ends."""

    def __init__(self, out: Path, command: str, argv, config: dict):
        self.path = out / "manifest.json"
        self.doc = {
            "command": command, "argv": list(argv), "config": config, "seed": config.get("seed"),
            "version": __version__, "outputs": [], "started": time.time(), "finished": None,
            "status": "running", "exit_code": None,
        }
        _write_json_atomic(self.path, self.doc)

    def add(self, *paths):
        self.doc["outputs"] += [str(Path(p).name) for p in paths]

    def finish(self, code: int, error: str | None = None):
        self.doc.update(finished=time.time(), exit_code=code, status="ok" if code == 0 else "failed")
        if error:
            self.doc["error"] = error
        _write_json_atomic(self.path, self.doc)


def _csv_path(data) -> Path:
    p = Path(data)
    if p.is_file():
        return p
    for name in CSV_NAMES:
        if (p / name).is_file():
            return p / name
    raise UsageError(f"no dataset CSV ({' or '.join(CSV_NAMES)}) under {p}")


def _load(data, preload=True):
    seq = load_udacity_csv(_csv_path(data))
    return seq.preload() if preload else seq


def _source(args, dtype="float32") -> SampleSource:
    ego = _load(args.data)
    lead = _load(args.lead_data) if getattr(args, "lead_data", None) else None
    return SampleSource(ego, lead, dtype=dtype)


def _parse_size(s: str):
    try:
        h, w = (int(v) for v in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {s!r}")
    return h, w


def _parse_range(s: str):
    """``start:stop:step`` with an inclusive stop, e.g. 0:95:5 -> 0, 5, ..., 95."""
    try:
        start, stop, step = (int(v) for v in s.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like start:stop:step, got {s!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"bad range {s!r}")
    return list(range(start, stop + 1, step))


def _parse_ints(s: str):
    try:
        return [int(v) for v in s.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _train_config(args, source: SampleSource | None = None) -> TrainConfig:
    dt = args.dt
    if args.dt_seconds is not None:
        rate = source.ego.rate_hz if source is not None else float("nan")
        if not rate == rate:
            raise ConfigurationError("--dt-seconds needs a dataset with a measurable frame rate")
        dt = int(round(args.dt_seconds * rate))
        log.info("dt %.3f s at %.2f Hz -> %d frames", args.dt_seconds, rate, dt)
    return TrainConfig(
        arch=args.arch, x=args.x, dt=dt, epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        seed=args.seed, train_fraction=args.train_fraction, augment=not args.no_augment,
        frame_gap=args.frame_gap, dtype=args.dtype,
    )


def _restore(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    ck = load_checkpoint(ckpt)
    train = ck.meta.get("train")
    if not train:
        raise UsageError(f"{ckpt} carries no training config; was it written by 'coopsteer train'?")
    return ck.model, TrainConfig(**train)


def _plot(args, obj, out: Path, manifest: Manifest):
    if getattr(args, "plot_data", False):
        manifest.add(*emit_plot_data(obj, out / "plot"))


# -- commands ---------------------------------------------------------------
def cmd_gen_synth(args, out: Path, manifest: Manifest) -> None:
    h, w = args.size
    seq = synth_generate(args.frames, seed=args.seed, h=h, w=w, glare_prob=args.glare)
    manifest.add(export_dataset(seq, out))
    log.info("wrote %d frames (%d with glare) to %s", len(seq), int(seq.glare.sum()), out)
    if args.clean_lead:
        lead = synth_generate(args.frames, seed=args.seed, h=h, w=w, glare_prob=0.0)
        export_dataset(lead, out / "lead")
        manifest.add(out / "lead")


def cmd_train(args, out: Path, manifest: Manifest) -> None:
    source = _source(args, args.dtype)
    cfg = _train_config(args, source)
    meta = {"train": asdict(cfg)}
    try:
        model, report, _ = fit(source, cfg)
    except TrainingDivergedError as e:
        if e.last_good_params is not None:
            model = SteeringModel(cfg.model_config(source.frame_shape))
            model.load_state_dict(e.last_good_params)
            manifest.add(save_checkpoint(out / "model.ckpt", model, meta={**meta, "status": "diverged",
                                                                       "diagnostics": e.diagnostics}))
        raise
    manifest.add(save_checkpoint(out / "model.ckpt", model, meta={**meta, "status": "ok"}))
    manifest.add(export_results(report, out / "metrics.json"))
    manifest.doc["wall_clock_s"] = report.wall_clock_s
    _plot(args, report, out, manifest)
    val = report.splits.get("val")
    log.info("train rmse %.6g, val rmse %s (best epoch %d)", report.splits["train"].rmse,
             f"{val.rmse:.6g}" if val else "n/a", report.best_epoch)


def cmd_eval(args, out: Path, manifest: Manifest) -> None:
    model, cfg = _restore(args)
    source = _source(args, model.config.dtype)
    train_w, val_w = prepare_split(source, cfg)
    splits = {"train": evaluate(model, source, train_w, cfg.eval_batch_size)}
    if val_w:
        splits["val"] = evaluate(model, source, val_w, cfg.eval_batch_size)
    report = MetricsReport(splits=splits, final_val=splits.get("val"),
                           config={"train": asdict(cfg), "model": model.config.to_dict(),
                                   "n_train": len(train_w), "n_val": len(val_w)})
    manifest.add(export_results(report, out / "metrics.json"))
    for k, m in splits.items():
        log.info("%s: rmse %.6g mae %.6g (n=%d)", k, m.rmse, m.mae, m.n)


def cmd_sweep_x(args, out: Path, manifest: Manifest) -> None:
    source = _source(args, args.dtype)
    base = _train_config(args, source)
    table = sweep_x(source, base, args.values, jobs=args.jobs)
    manifest.add(export_results(table, out / "sweep.csv"), export_results(table, out / "sweep.json"))
    _plot(args, table, out, manifest)


def cmd_sweep_dt(args, out: Path, manifest: Manifest) -> None:
    model, cfg = _restore(args)
    source = _source(args, model.config.dtype)
    train_w, val_w = prepare_split(source, cfg)
    table = sweep_dt(model, source, val_w, args.range, train_windows=train_w)
    manifest.add(export_results(table, out / "sweep.csv"), export_results(table, out / "sweep.json"))
    _plot(args, table, out, manifest)


def cmd_trace(args, out: Path, manifest: Manifest) -> None:
    model, cfg = _restore(args)
    source = _source(args, model.config.dtype)
    x = args.x if args.x is not None else cfg.x
    dt = args.dt if args.dt is not None else cfg.dt
    if x != model.config.x:
        raise ConfigurationError(f"model was built for x={model.config.x}, got --x {x}")
    trace = error_trace(model, source, x, dt)
    manifest.add(export_results(trace, out / "trace.csv"), export_results(trace, out / "trace.json"))
    _plot(args, trace, out, manifest)
    log.info("trace over %d anchors: %s", len(trace.index), trace.summary())


COMMANDS = {
    "gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval,
    "sweep-x": cmd_sweep_x, "sweep-dt": cmd_sweep_dt, "trace": cmd_trace,
}


# -- parser -------------------------------------------------------------------
def _train_flags(p, dt_default=30):
    p.add_argument("--arch", choices=ARCHS, default="coop")
    p.add_argument("--x", type=int, default=8, help="frames per vehicle")
    p.add_argument("--dt", type=int, default=dt_default, help="lead offset in frames")
    p.add_argument("--dt-seconds", type=float, default=None, help="lead offset in seconds (overrides --dt)")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--frame-gap", type=int, default=1, help="frame gap for baselineD/E")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def _data_flags(p, lead=True):
    p.add_argument("--data", required=True, help="dataset directory or CSV")
    if lead:
        p.add_argument("--lead-data", default=None, help="separate lead-vehicle stream (default: ego stream)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopsteer", description=__doc__.split("\n")[0],
                                     epilog=__doc__.split("\n", 2)[2],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"coopsteer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="JSON file supplying any flag; command line wins")
        p.add_argument("--log-level", default="INFO")
        return p

    p = command("gen-synth", "render a synthetic road dataset")
    p.add_argument("--frames", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=_parse_size, default=(64, 64), help="HxW")
    p.add_argument("--glare", type=float, default=0.0, help="per-frame glare probability")
    p.add_argument("--clean-lead", action="store_true", help="also write a glare-free twin under OUT/lead")

    p = command("train", "train one model")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--plot-data", action="store_true")

    p = command("eval", "evaluate a checkpoint on its own train/val split")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = command("sweep-x", "one training run per x")
    _data_flags(p)
    _train_flags(p)
    p.add_argument("--values", type=_parse_ints, default=list(X_SWEEP_VALUES))
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    p.add_argument("--plot-data", action="store_true")

    p = command("sweep-dt", "re-evaluate a checkpoint over a range of lead offsets")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--range", type=_parse_range, default=_parse_range("0:95:5"), help="start:stop:step, inclusive")
    p.add_argument("--plot-data", action="store_true")

    p = command("trace", "per-anchor prediction error over the whole stream")
    _data_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", type=int, default=None)
    p.add_argument("--dt", type=int, default=None)
    p.add_argument("--plot-data", action="store_true")
    return parser


def _with_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = json.loads(Path(args.config).read_text())
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise ConfigurationError(f"{args.config}: unknown option {key!r} for {args.command}")
        action = known[dest]
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _required_from_config(parser, argv):
    """Let --config supply flags that are otherwise required."""
    try:
        i = argv.index("--config")
        cfg = json.loads(Path(argv[i + 1]).read_text())
    except (ValueError, IndexError):
        return argv
    argv = list(argv)
    for key in ("data", "out", "checkpoint"):
        if key in cfg and f"--{key}" not in argv:
            argv += [f"--{key}", str(cfg[key])]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _with_config(parser, _required_from_config(parser, argv))
    except SystemExit as e:
        return int(e.code or 0)
    except (ConfigurationError, OSError, json.JSONDecodeError, argparse.ArgumentTypeError) as e:
        print(f"coopsteer: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        config = {k: v for k, v in vars(args).items() if k not in ("log_level",)}
        manifest = Manifest(out, args.command, argv, json.loads(json.dumps(config, default=str)))
    except OSError as e:
        print(f"coopsteer: cannot write to {out}: {e}", file=sys.stderr)
        return EXIT_IO

    code, message = EXIT_OK, None
    try:
        COMMANDS[args.command](args, out, manifest)
    except (NumericError, ArithmeticError) as e:
        code, message = EXIT_NUMERIC, str(e)
    except (FormatError, IngestionError) as e:
        code, message = EXIT_DATA, str(e)
    except (ConfigurationError, UsageError) as e:
        code, message = EXIT_USAGE, str(e)
    except OSError as e:
        code, message = EXIT_IO, str(e)
    except Exception as e:  # noqa: BLE001
        log.exception("unexpected failure")
        code, message = EXIT_INTERNAL, f"{type(e).__name__}: {e}"
    if message:
        print(f"coopsteer: {message}", file=sys.stderr)
    try:
        manifest.finish(code, message)
    except OSError as e:
        print(f"coopsteer: cannot finalize manifest: {e}", file=sys.stderr)
        return code or EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
