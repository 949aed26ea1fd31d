"""CSV/JSON result files and plain (x, y) series for external plotting."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .harness import ErrorTrace, MetricsReport, SweepTable

SCHEMA_ID = "coopsteer-results/1"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _rows(obj):
    if isinstance(obj, MetricsReport):
        return obj.rows()
    return obj.as_rows()


def to_document(obj) -> dict:
    doc = {
        "schema": SCHEMA_ID,
        "kind": obj.kind,
        "columns": list(obj.columns),
        "rows": [list(r) for r in _rows(obj)],
        "config": obj.config,
    }
    if isinstance(obj, MetricsReport):
        d = obj.to_dict()
        doc.update(history=d["history"], best_epoch=d["best_epoch"], final_val=d["final_val"])
    elif isinstance(obj, SweepTable):
        doc["parameter"] = obj.parameter
    elif isinstance(obj, ErrorTrace):
        doc["summary"] = obj.summary()
    return _jsonable(doc)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e}") from e


def export_results(obj, path, fmt: str | None = None) -> Path:
    """Write a MetricsReport, SweepTable or ErrorTrace as CSV or JSON."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt == "json":
        _atomic_write(path, json.dumps(to_document(obj), indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        lines = [",".join(obj.columns)]
        lines += [",".join(_fmt(v) for v in row) for row in _rows(obj)]
        _atomic_write(path, "\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown result format {fmt!r} (expected csv or json)")
    return path


def _parse_cell(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def load_results(path) -> dict:
    """Read back a result file as ``{"columns": [...], "rows": [...], ...}``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return json.loads(path.read_text())
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[_parse_cell(c) for c in row] for row in reader]
    return {"columns": columns, "rows": rows}


def schema_path() -> Path:
    return Path(__file__).resolve().parents[2] / "docs" / "results.schema.json"


def _write_series(path: Path, header: str, columns):
    arr = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns]) if columns[0] is not None and len(columns[0]) else np.empty((0, len(columns)))
    np.savetxt(path, arr, fmt="%.6g", header=header)
    return path


def emit_plot_data(obj, out_dir) -> list[Path]:
    """Whitespace-separated series files, one per curve, for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, SweepTable):
        ok = [r for r in obj.rows if r.status == "ok"]
        nan = float("nan")
        written.append(_write_series(
            out / f"rmse_vs_{obj.parameter}.dat", f"{obj.parameter} rmse_val rmse_train",
            [[r.value for r in ok], [r.rmse_val for r in ok],
             [nan if r.rmse_train is None else r.rmse_train for r in ok]],
        ))
    elif isinstance(obj, ErrorTrace):
        written.append(_write_series(out / "error_trace.dat", "index error", [obj.index, obj.error]))
        written.append(_write_series(out / "ground_truth.dat", "index angle", [obj.index, obj.label]))
    elif isinstance(obj, MetricsReport):
        h = obj.history
        written.append(_write_series(
            out / "loss_curve.dat", "epoch train_loss val_loss",
            [[e["epoch"] for e in h], [e["train_loss"] for e in h], [e.get("val_loss", float("nan")) for e in h]],
        ))
    else:
        raise TypeError(f"no plot series for {type(obj).__name__}")
    return written
