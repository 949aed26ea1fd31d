"""Procedural road sequences with a known steering signal.

Each frame shows one bright 3-pixel road line on a dark road. The row ``d``
pixels above the bottom edge is drawn at the line position the signal takes
``d/4`` frames in the future, so the bottom row holds the current angle and the
top row (far away) shows roughly H/4 frames ahead.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import FrameRecord, FrameSequence, write_udacity_csv

AMP1, PERIOD1 = 0.5, 97.0
AMP2, PERIOD2, PHASE2 = 0.3, 41.0, 1.0
ROWS_PER_FRAME = 4
ROAD, LINE, GLARE = 60, 255, 255
FRAME_NS = 50_000_000  # 20 Hz


def steering_signal(t) -> np.ndarray:
    """s(t) = 0.5 sin(2 pi t / 97) + 0.3 sin(2 pi t / 41 + 1), radians."""
    t = np.asarray(t, dtype=np.float64)
    return AMP1 * np.sin(2 * np.pi * t / PERIOD1) + AMP2 * np.sin(2 * np.pi * t / PERIOD2 + PHASE2)


def signal_rms() -> float:
    """Long-run RMS of the steering signal (the two tones are incommensurate)."""
    return float(np.sqrt(AMP1**2 / 2 + AMP2**2 / 2))


def _cos_sum(omega: float, phase: float, t0: int, n: int) -> float:
    # sum_{k=0}^{n-1} cos(omega (t0 + k) + phase)
    if np.isclose(np.sin(omega / 2), 0.0):
        return n * np.cos(omega * t0 + phase)
    return np.sin(n * omega / 2) / np.sin(omega / 2) * np.cos(omega * t0 + phase + (n - 1) * omega / 2)


def signal_mean_square(t0: int, n: int) -> float:
    """Closed-form mean of s(t)^2 over the integers t0 .. t0+n-1."""
    a = 2 * np.pi / PERIOD1
    b = 2 * np.pi / PERIOD2
    # sin^2 u = (1 - cos 2u)/2 ; 2 sin u sin v = cos(u - v) - cos(u + v)
    total = AMP1**2 / 2 * (n - _cos_sum(2 * a, 0.0, t0, n))
    total += AMP2**2 / 2 * (n - _cos_sum(2 * b, 2 * PHASE2, t0, n))
    total += AMP1 * AMP2 * (_cos_sum(a - b, -PHASE2, t0, n) - _cos_sum(a + b, PHASE2, t0, n))
    return float(total / n)


def line_columns(t: int, h: int, w: int) -> np.ndarray:
    """Line center column for each image row (row 0 = top = farthest ahead)."""
    d = (h - 1) - np.arange(h)
    return w // 2 + np.round(steering_signal(t + d / ROWS_PER_FRAME) * w / 4).astype(int)


def render_frame(t: int, h: int, w: int) -> np.ndarray:
    img = np.full((h, w, 3), ROAD, dtype=np.uint8)
    cols = line_columns(t, h, w)
    for r, c in enumerate(cols):
        img[r, max(c - 1, 0) : min(c + 2, w)] = LINE
    return img


def synth_generate(n_frames: int, seed: int = 0, h: int = 64, w: int = 64, glare_prob: float = 0.0) -> FrameSequence:
    """Render ``n_frames`` road frames; each is whited out with probability ``glare_prob``.

    The glare mask is kept on ``seq.glare``.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    glare = rng.random(n_frames) < glare_prob
    images = np.empty((n_frames, h, w, 3), dtype=np.uint8)
    for t in range(n_frames):
        images[t] = GLARE if glare[t] else render_frame(t, h, w)
    angles = steering_signal(np.arange(n_frames))
    records = [
        FrameRecord(
            index=t, timestamp=t * FRAME_NS, width=w, height=h, frame_id="center_camera",
            filename=f"center/frame_{t:06d}.png", angle=float(angles[t]), speed=10.0,
        )
        for t in range(n_frames)
    ]
    seq = FrameSequence(records, images=images)
    seq.glare = glare
    return seq


def decode_angle(image: np.ndarray, row: int = -1) -> float:
    """Read the line position in one row back into an angle."""
    h, w = image.shape[:2]
    line = np.flatnonzero(image[row, :, 0] > (ROAD + LINE) // 2)
    if line.size == 0 or line.size == w:
        return float("nan")
    return float((line.mean() - w // 2) / (w / 4))


def export_dataset(seq: FrameSequence, out_dir) -> Path:
    """Write ``driving_log.csv`` plus PNG frames in the Udacity layout."""
    from PIL import Image

    out = Path(out_dir)
    (out / "center").mkdir(parents=True, exist_ok=True)
    for r, img in zip(seq.records, seq.images):
        Image.fromarray(img).save(out / r.filename, optimize=False)
    return write_udacity_csv(seq, out / "driving_log.csv")
