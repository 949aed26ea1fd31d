"""Training loop, metrics, and the x / dt sweeps and per-frame error trace."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import SampleSource, WindowSpec, make_windows, split_train_val
from .errors import ConfigurationError, EmptyBatchError, NumericError, TrainingDivergedError
from .models import ModelConfig, SteeringModel
from .optim import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_LR, AdamState, adam_step
from .tensor import Tensor, backward, mse_loss

log = logging.getLogger(__name__)

X_SWEEP_VALUES = (1, 2, 4, 6, 8, 10, 12, 14, 20)
DT_SWEEP_VALUES = tuple(range(0, 96, 5))
EVAL_BATCH = 256


@dataclass
class TrainConfig:
    arch: str = "coop"
    x: int = 8
    dt: int = 30
    epochs: int = 15
    batch_size: int = 64
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    seed: int = 42
    train_fraction: float = 0.8
    augment: bool = True
    frame_gap: int = 1
    dtype: str = "float32"
    eval_batch_size: int = EVAL_BATCH

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError(f"batch_size and epochs must be >= 1 (got {self.batch_size}, {self.epochs})")
        if self.x < 1 or self.dt < 0:
            raise ConfigurationError(f"need x >= 1 and dt >= 0 (got {self.x}, {self.dt})")

    def model_config(self, frame_shape) -> ModelConfig:
        h, w, c = frame_shape
        return ModelConfig(arch=self.arch, x=self.x, input_h=h, input_w=w, channels=c,
                           frame_gap=self.frame_gap, dtype=self.dtype, seed=self.seed)


@dataclass
class Metrics:
    rmse: float
    mae: float
    n: int


def rmse(pred, target) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def mae(pred, target) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(np.abs(d)))


@dataclass
class MetricsReport:
    splits: dict[str, Metrics]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    final_val: Metrics | None = None
    config: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    kind = "metrics"

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "splits": {k: asdict(v) for k, v in self.splits.items()},
            "history": self.history,
            "best_epoch": self.best_epoch,
            "final_val": asdict(self.final_val) if self.final_val else None,
            "config": self.config,
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    columns = ("split", "rmse", "mae", "n")

    def rows(self):
        return [(k, m.rmse, m.mae, m.n) for k, m in self.splits.items()]


def usable_windows(n_frames: int, x: int, dt: int, arch: str = "coop", frame_gap: int = 1):
    windows = make_windows(n_frames, x, dt)
    if arch in ("baselineD", "baselineE"):
        windows = [w for w in windows if w.t >= frame_gap]
    return windows


def prepare_split(source: SampleSource, cfg: TrainConfig):
    """Windows over the ego stream, labeled, split by ``cfg.seed``."""
    windows = make_windows(source.ego, cfg.x, cfg.dt)
    if cfg.arch in ("baselineD", "baselineE"):
        windows = [w for w in windows if w.t >= cfg.frame_gap]
    if not windows:
        raise ConfigurationError(f"no valid windows for x={cfg.x}, dt={cfg.dt} over {len(source)} frames")
    return split_train_val(windows, cfg.train_fraction, cfg.seed)


def predict(model: SteeringModel, source: SampleSource, windows: Sequence[WindowSpec],
            batch_size: int = EVAL_BATCH) -> np.ndarray:
    cfg = model.config
    out = np.empty(len(windows), dtype=np.float64)
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        frames, _ = source.batch(chunk, cfg.arch, cfg.frame_gap)
        out[start : start + len(chunk)] = model(Tensor(frames.astype(cfg.dtype, copy=False))).data
    return out


def evaluate(model: SteeringModel, source: SampleSource, windows: Sequence[WindowSpec],
             batch_size: int = EVAL_BATCH) -> Metrics:
    """RMSE and MAE over ``windows``; never augments."""
    if len(windows) == 0:
        raise EmptyBatchError("evaluate called with no windows")
    pred = predict(model, source, windows, batch_size)
    labels = np.array([w.label for w in windows], dtype=np.float64)
    return Metrics(rmse(pred, labels), mae(pred, labels), len(windows))


def train(model: SteeringModel, source: SampleSource, train_windows: Sequence[WindowSpec],
          val_windows: Sequence[WindowSpec], cfg: TrainConfig):
    """Minibatch MSE with Adam; returns the best-validation model and its report."""
    if len(train_windows) == 0:
        raise EmptyBatchError("empty training split")
    started = time.perf_counter()
    mcfg = model.config
    params = model.parameters()
    opt = AdamState.create(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    order = list(train_windows)
    best_state, best_rmse, best_epoch = model.state_dict(), np.inf, 0
    history = []
    val_m = None
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(order))
        total, count = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            batch = [order[i] for i in perm[start : start + cfg.batch_size]]
            frames, labels = source.batch(batch, mcfg.arch, mcfg.frame_gap, rng if cfg.augment else None)
            model.zero_grad()
            loss = mse_loss(model(Tensor(frames.astype(mcfg.dtype, copy=False))), labels.astype(mcfg.dtype))
            value = float(loss.data)
            if not np.isfinite(value):
                model.load_state_dict(best_state)
                raise TrainingDivergedError(
                    f"loss became {value} at epoch {epoch}, batch {start // cfg.batch_size}",
                    last_good_params=best_state, diagnostics={"epoch": epoch, "batch_start": start},
                )
            backward(loss, params.values())
            try:
                adam_step(params, opt)
            except NumericError as e:
                model.load_state_dict(best_state)
                raise TrainingDivergedError(str(e), last_good_params=best_state,
                                            diagnostics={"epoch": epoch, "batch_start": start}) from e
            total += value * len(batch)
            count += len(batch)
        entry = {"epoch": epoch, "train_loss": total / count}
        if val_windows:
            val_m = evaluate(model, source, val_windows, cfg.eval_batch_size)
            entry.update(val_loss=val_m.rmse**2, val_rmse=val_m.rmse, val_mae=val_m.mae)
            if val_m.rmse < best_rmse:
                best_rmse, best_epoch, best_state = val_m.rmse, epoch, model.state_dict()
        else:
            best_epoch, best_state = epoch, model.state_dict()
        history.append(entry)
        log.info("epoch %d: %s", epoch, entry)
    model.load_state_dict(best_state)
    splits = {"train": evaluate(model, source, train_windows, cfg.eval_batch_size)}
    if val_windows:
        splits["val"] = evaluate(model, source, val_windows, cfg.eval_batch_size)
    report = MetricsReport(
        splits=splits, history=history, best_epoch=best_epoch, final_val=val_m,
        config={"train": asdict(cfg), "model": mcfg.to_dict(),
                "n_train": len(train_windows), "n_val": len(val_windows)},
        wall_clock_s=time.perf_counter() - started,
    )
    return model, report


def fit(source: SampleSource, cfg: TrainConfig):
    """Build the split and a fresh model from ``cfg``, then train."""
    train_w, val_w = prepare_split(source, cfg)
    model = SteeringModel(cfg.model_config(source.frame_shape))
    model, report = train(model, source, train_w, val_w, cfg)
    return model, report, (train_w, val_w)


# -- sweeps -----------------------------------------------------------------
@dataclass
class SweepRow:
    value: int
    rmse_train: float | None
    rmse_val: float | None
    status: str = "ok"


@dataclass
class SweepTable:
    parameter: str
    rows: list[SweepRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    kind = "sweep"
    columns = ("value", "rmse_train", "rmse_val", "status")

    def __post_init__(self):
        if self.parameter not in ("x", "dt"):
            raise ConfigurationError(f"sweep parameter must be 'x' or 'dt', got {self.parameter!r}")
        vals = [r.value for r in self.rows]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigurationError("sweep values must be strictly increasing")

    def as_rows(self):
        return [(r.value, r.rmse_train, r.rmse_val, r.status) for r in self.rows]

    def best(self) -> SweepRow:
        ok = [r for r in self.rows if r.status == "ok" and r.rmse_val is not None]
        return min(ok, key=lambda r: r.rmse_val)


def _check_values(values):
    values = [int(v) for v in values]
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigurationError(f"sweep values must be strictly increasing: {values}")
    return values


def _sweep_x_point(args):
    source, cfg = args
    try:
        train_w, val_w = prepare_split(source, cfg)
    except ConfigurationError:
        return SweepRow(cfg.x, None, None, "infeasible")
    if not val_w:
        return SweepRow(cfg.x, None, None, "infeasible")
    _, report, _ = fit(source, cfg)
    return SweepRow(cfg.x, report.splits["train"].rmse, report.splits["val"].rmse)


def sweep_x(source: SampleSource, base: TrainConfig, values=X_SWEEP_VALUES, jobs: int = 1) -> SweepTable:
    """One independent training run per x; run i uses seed base.seed + i."""
    values = _check_values(values)
    tasks = [(source, replace(base, x=v, seed=base.seed + i)) for i, v in enumerate(values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_x_point, tasks))
    else:
        rows = [_sweep_x_point(t) for t in tasks]
    return SweepTable("x", rows, config={"train": asdict(base), "values": values})


def sweep_dt(model: SteeringModel, source: SampleSource, val_windows: Sequence[WindowSpec],
             values=DT_SWEEP_VALUES, train_windows: Sequence[WindowSpec] | None = None) -> SweepTable:
    """Re-evaluate a trained model with the lead frames taken at each dt.

    Anchors come from the given windows; anchors whose lead frames would run
    past the end of the stream are dropped for that dt. The model is not touched.
    """
    values = _check_values(values)
    n = len(source)

    def shifted(windows, dt):
        return [w.at(dt) for w in windows if w.t + dt + w.x - 1 <= n - 1]

    rows = []
    for dt in values:
        val = shifted(val_windows, dt)
        if not val:
            rows.append(SweepRow(dt, None, None, "infeasible"))
            continue
        r_val = evaluate(model, source, val).rmse
        r_train = None
        if train_windows is not None:
            tr = shifted(train_windows, dt)
            r_train = evaluate(model, source, tr).rmse if tr else None
        rows.append(SweepRow(dt, r_train, r_val))
    return SweepTable("dt", rows, config={"model": model.config.to_dict(), "values": values})


# -- per-frame trace ----------------------------------------------------------
@dataclass
class ErrorTrace:
    index: np.ndarray
    label: np.ndarray
    prediction: np.ndarray
    config: dict = field(default_factory=dict)

    kind = "trace"
    columns = ("index", "label", "prediction", "error")

    @property
    def error(self) -> np.ndarray:
        return self.prediction - self.label

    def as_rows(self):
        return list(zip(self.index.tolist(), self.label.tolist(), self.prediction.tolist(), self.error.tolist()))

    def summary(self) -> dict:
        if len(self.index) == 0:
            return {}
        e = self.error
        hi, lo = int(np.argmax(e)), int(np.argmin(e))
        return {
            "max_error": float(e[hi]), "max_index": int(self.index[hi]),
            "min_error": float(e[lo]), "min_index": int(self.index[lo]),
            "rmse": rmse(self.prediction, self.label), "mae": mae(self.prediction, self.label),
        }


def error_trace(model: SteeringModel, source: SampleSource, x: int, dt: int) -> ErrorTrace:
    """Prediction error (prediction - label) at every valid anchor of the stream."""
    cfg = model.config
    windows = usable_windows(len(source), x, dt, cfg.arch, cfg.frame_gap)
    angles = source.ego.angles
    windows = [WindowSpec(w.t, w.x, w.dt, float(angles[w.t])) for w in windows]
    if not windows:
        return ErrorTrace(np.array([], dtype=int), np.array([]), np.array([]), {"x": x, "dt": dt})
    pred = predict(model, source, windows)
    return ErrorTrace(
        np.array([w.t for w in windows]), np.array([w.label for w in windows]), pred,
        config={"x": x, "dt": dt, "model": cfg.to_dict()},
    )
