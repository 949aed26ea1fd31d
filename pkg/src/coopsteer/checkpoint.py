"""Binary checkpoints: magic line, length-prefixed JSON header, raw arrays.

Layout::

    b"COOPSTEER-CKPT-1\\n"
    uint64 little-endian header length
    header JSON (utf-8): model config, parameter table, optimizer state, meta
    concatenated little-endian row-major arrays, offsets given in the header
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .models import ModelConfig, SteeringModel
from .optim import AdamState

MAGIC = b"COOPSTEER-CKPT-1\n"


@dataclass
class Checkpoint:
    model: SteeringModel
    optimizer: AdamState | None = None
    meta: dict = field(default_factory=dict)


def _table(arrays: dict[str, np.ndarray], chunks: list[bytes], offset: int):
    entries = []
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str.lstrip("<>=|"), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    return entries, offset


def save_checkpoint(path, model: SteeringModel, optimizer: AdamState | None = None, meta: dict | None = None) -> Path:
    path = Path(path)
    chunks: list[bytes] = []
    params, offset = _table(model.state_dict(), chunks, 0)
    header = {"format": MAGIC.decode().strip(), "model": model.config.to_dict(), "params": params, "meta": meta or {}}
    if optimizer is not None:
        m, offset = _table({k: v for k, v in optimizer.m.items()}, chunks, offset)
        v, offset = _table({k: v for k, v in optimizer.v.items()}, chunks, offset)
        header["optimizer"] = {**optimizer.hyperparameters(), "w1": optimizer.w1, "w2": optimizer.w2, "m": m, "v": v}
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)
    return path


def _read_arrays(entries, body: bytes) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype=dt, count=count, offset=e["offset"])
        out[e["name"]] = arr.astype(dt.newbyteorder("="), copy=True).reshape(e["shape"])
    return out


def read_header(path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint (missing {MAGIC.strip().decode()} header)")
    (n,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start : start + n])
    return header, data[start + n :]


def load_checkpoint(path) -> Checkpoint:
    header, body = read_header(path)
    cfg = ModelConfig.from_dict(header["model"])
    model = SteeringModel(cfg)
    model.load_state_dict(_read_arrays(header["params"], body))
    opt = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = AdamState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"], w1=o["w1"], w2=o["w2"])
        opt.m = _read_arrays(o["m"], body)
        opt.v = _read_arrays(o["v"], body)
    return Checkpoint(model, opt, header.get("meta", {}))


def params_digest(model: SteeringModel) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
