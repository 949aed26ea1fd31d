"""Frame streams, the ego/lead window protocol, augmentation and batching."""

from __future__ import annotations

import csv
import logging
import os
from collections import OrderedDict
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, IngestionError

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "index", "timestamp", "width", "height", "frame_id", "filename",
    "angle", "torque", "speed", "latitude", "longitude", "altitude",
)
DEFAULT_CACHE_BYTES = 512 * 1024 * 1024
NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: int
    width: int
    height: int
    frame_id: str
    filename: str
    angle: float
    torque: float = 0.0
    speed: float = 0.0
    latitude: float = 0.0
    longitude: float = 0.0
    altitude: float = 0.0


class ImageCache:
    """LRU cache of decoded frames bounded by total bytes."""

    def __init__(self, max_bytes: int | None = None):
        if max_bytes is None:
            max_bytes = int(os.environ.get("COOPSTEER_CACHE_BYTES", DEFAULT_CACHE_BYTES))
        self.max_bytes = max_bytes
        self.nbytes = 0
        self._items: OrderedDict[str, np.ndarray] = OrderedDict()

    def get(self, key: str, load):
        arr = self._items.get(key)
        if arr is not None:
            self._items.move_to_end(key)
            return arr
        arr = load(key)
        if arr.nbytes <= self.max_bytes:
            self._items[key] = arr
            self.nbytes += arr.nbytes
            while self.nbytes > self.max_bytes:
                _, old = self._items.popitem(last=False)
                self.nbytes -= old.nbytes
        return arr

    def __len__(self):
        return len(self._items)


def decode_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


class FrameSequence:
    """Ordered camera frames with telemetry.

    Pixels come either from an in-memory uint8 array ``(N, H, W, 3)`` or from
    files under ``image_root`` decoded on demand through an LRU cache.
    """

    def __init__(self, records: Sequence[FrameRecord], images: np.ndarray | None = None,
                 image_root=None, cache: ImageCache | None = None):
        self.records = list(records)
        self.images = images
        self.image_root = Path(image_root) if image_root is not None else None
        self.cache = cache if cache is not None else ImageCache()
        self.glare: np.ndarray | None = None
        if images is not None and len(images) != len(self.records):
            raise ConfigurationError(f"{len(images)} images for {len(self.records)} records")

    def __len__(self):
        return len(self.records)

    @property
    def angles(self) -> np.ndarray:
        return np.array([r.angle for r in self.records], dtype=np.float64)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        if self.images is not None:
            return tuple(self.images.shape[1:])
        r = self.records[0]
        return (r.height, r.width, 3)

    @property
    def duration_s(self) -> float:
        if len(self.records) < 2:
            return 0.0
        return (self.records[-1].timestamp - self.records[0].timestamp) / NS_PER_S

    @property
    def rate_hz(self) -> float:
        """Measured frame rate, assuming nanosecond timestamps."""
        d = self.duration_s
        return (len(self) - 1) / d if d > 0 else float("nan")

    def image(self, i: int) -> np.ndarray:
        if self.images is not None:
            return self.images[i]
        path = str(self.image_root / self.records[i].filename)
        return self.cache.get(path, decode_image)

    def preload(self) -> "FrameSequence":
        """Decode every frame into one in-memory array (bypasses the cache)."""
        if self.images is None and self.records:
            root = self.image_root
            self.images = np.stack([decode_image(root / r.filename) for r in self.records])
        return self

    def gather(self, indices) -> np.ndarray:
        idx = np.asarray(indices)
        if self.images is not None:
            return self.images[idx]
        flat = np.stack([self.image(int(i)) for i in idx.reshape(-1)])
        return flat.reshape(*idx.shape, *flat.shape[1:])


# -- ingestion --------------------------------------------------------------
def _parse(row: dict, line: int) -> FrameRecord:
    vals = {}
    for name in CSV_FIELDS:
        raw = row[name]
        try:
            if name in ("index", "timestamp", "width", "height"):
                vals[name] = int(raw)
            elif name in ("frame_id", "filename"):
                vals[name] = raw
            else:
                vals[name] = float(raw)
        except (TypeError, ValueError):
            raise FormatError(f"line {line}: column {name!r} has unparseable value {raw!r}") from None
    rec = FrameRecord(**vals)
    if rec.width * rec.height <= 0:
        raise FormatError(f"line {line}: non-positive frame size {rec.width}x{rec.height}")
    if not np.isfinite(rec.angle):
        raise FormatError(f"line {line}: non-finite angle {rec.angle}")
    return rec


def load_udacity_csv(path, image_root=None, verify_images: bool = True,
                     cache: ImageCache | None = None) -> FrameSequence:
    """Parse a Udacity-format CSV into a timestamp-ordered center-camera sequence."""
    path = Path(path)
    image_root = Path(image_root) if image_root is not None else path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in CSV_FIELDS:
            if name not in header:
                raise FormatError(f"{path}: missing column {name!r}")
        records = [_parse(row, line) for line, row in enumerate(reader, start=2)]
    records = [r for r in records if "center" in r.frame_id]
    records.sort(key=lambda r: r.timestamp)
    for a, b in zip(records, records[1:]):
        if b.timestamp <= a.timestamp:
            raise FormatError(f"{path}: duplicate timestamp {b.timestamp}")
    if verify_images:
        bad = []
        from PIL import Image

        for r in records:
            p = image_root / r.filename
            try:
                with Image.open(p) as im:
                    if im.size != (r.width, r.height):
                        bad.append((r.index, str(p), f"size {im.size} != {(r.width, r.height)}"))
            except (OSError, ValueError) as e:
                bad.append((r.index, str(p), str(e)))
        if bad:
            listing = "; ".join(f"index {i}: {p} ({why})" for i, p, why in bad[:10])
            raise IngestionError(f"{len(bad)} unreadable image(s): {listing}", rows=bad)
    seq = FrameSequence(records, image_root=image_root, cache=cache)
    log.info("loaded %d frames spanning %.1f s from %s", len(seq), seq.duration_s, path)
    return seq


def write_udacity_csv(seq: FrameSequence, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in seq.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(r)])
    return path


# -- windows ----------------------------------------------------------------
@dataclass(frozen=True)
class WindowSpec:
    t: int
    x: int
    dt: int
    label: float = float("nan")

    @property
    def ego_indices(self) -> list[int]:
        return list(range(self.t - self.x + 1, self.t + 1))

    @property
    def lead_indices(self) -> list[int]:
        return list(range(self.t + self.dt, self.t + self.dt + self.x))

    def at(self, dt: int, label: float | None = None) -> "WindowSpec":
        return WindowSpec(self.t, self.x, dt, self.label if label is None else label)


def window_anchor_range(n: int, x: int, dt: int) -> range:
    return range(x - 1, n - dt - x + 1)


def make_windows(seq, x: int, dt: int) -> list[WindowSpec]:
    """Every anchor t whose x ego frames and x lead frames at t+dt exist.

    ``seq`` is a FrameSequence (labels taken from its angles) or a length.
    """
    if x < 1 or dt < 0:
        raise ConfigurationError(f"need x >= 1 and dt >= 0 (got x={x}, dt={dt})")
    if isinstance(seq, (int, np.integer)):
        n, angles = int(seq), None
    else:
        n, angles = len(seq), seq.angles
    return [
        WindowSpec(t, x, dt, float(angles[t]) if angles is not None else float("nan"))
        for t in window_anchor_range(n, x, dt)
    ]


def split_train_val(windows: Sequence[WindowSpec], fraction: float = 0.8, seed: int = 0):
    """Seeded window-level shuffle; first ``fraction`` to train, rest to validation.

    Each window keeps its internal frame order. Both halves come back sorted by anchor.
    """
    if not 0 < fraction < 1:
        raise ConfigurationError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(windows)
    if n == 0:
        raise ConfigurationError("cannot split an empty window list")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fraction * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    train = sorted((windows[i] for i in perm[:n_train]), key=lambda w: w.t)
    val = sorted((windows[i] for i in perm[n_train:]), key=lambda w: w.t)
    return train, val


# -- pixels -----------------------------------------------------------------
def normalize(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 [0, 255] -> [-0.5, 0.5]."""
    out = images.astype(dtype)
    out /= 255.0
    out -= 0.5
    return out


def apply_brightness_contrast(images: np.ndarray, delta, factor) -> np.ndarray:
    """Contrast about each image's own mean, then brightness shift, then clamp.

    ``images`` is (..., H, W, C); ``delta`` and ``factor`` broadcast over the
    leading axes.
    """
    delta = np.asarray(delta, dtype=images.dtype)[..., None, None, None]
    factor = np.asarray(factor, dtype=images.dtype)[..., None, None, None]
    mu = images.mean(axis=(-3, -2, -1), keepdims=True)
    # img*f + (mu*(1-f) + delta) == (img - mu)*f + mu + delta, exact at f=1, delta=0
    out = images * factor + (mu * (1 - factor) + delta)
    return np.clip(out, -0.5, 0.5, out=out)


def augment(image: np.ndarray, rng: np.random.Generator, brightness: float = 0.2, contrast: float = 0.2):
    """Random brightness shift and mean-anchored contrast change; no cropping."""
    lead = image.shape[:-3]
    delta = rng.uniform(-brightness, brightness, size=lead)
    factor = rng.uniform(1 - contrast, 1 + contrast, size=lead)
    return apply_brightness_contrast(image, delta, factor)


class SampleSource:
    """Assembles model inputs from an ego stream and a (time-shifted) lead stream.

    By default the lead vehicle's camera is the ego stream itself, shifted by dt.
    """

    def __init__(self, ego: FrameSequence, lead: FrameSequence | None = None, dtype=np.float32):
        self.ego = ego
        self.lead = lead if lead is not None else ego
        if len(self.lead) != len(self.ego):
            raise ConfigurationError(f"ego has {len(self.ego)} frames, lead has {len(self.lead)}")
        self.dtype = np.dtype(dtype)

    def __len__(self):
        return len(self.ego)

    @property
    def frame_shape(self):
        return self.ego.frame_shape

    def frame_indices(self, windows: Sequence[WindowSpec], arch: str, frame_gap: int = 1):
        """Per-window (ego_idx, lead_idx) arrays for ``arch``."""
        t = np.array([w.t for w in windows])
        if arch == "coop":
            ego = np.stack([w.ego_indices for w in windows])
            lead = np.stack([w.lead_indices for w in windows])
            return ego, lead
        if arch == "baselineA":
            return t[:, None], None
        if (t - frame_gap < 0).any():
            raise ConfigurationError(f"{arch}: anchor {int(t.min())} has no frame {frame_gap} steps earlier")
        return np.stack([t - frame_gap, t], axis=1), None

    def batch(self, windows: Sequence[WindowSpec], arch: str = "coop", frame_gap: int = 1,
              rng: np.random.Generator | None = None):
        """(frames, labels): frames is (B, F, H, W, 3) normalized; augmented iff ``rng``."""
        ego_idx, lead_idx = self.frame_indices(windows, arch, frame_gap)
        frames = normalize(self.ego.gather(ego_idx), self.dtype)
        if lead_idx is not None:
            frames = np.concatenate([frames, normalize(self.lead.gather(lead_idx), self.dtype)], axis=1)
        if rng is not None:
            frames = augment(frames, rng)
        labels = np.array([w.label for w in windows], dtype=self.dtype)
        return frames, labels
