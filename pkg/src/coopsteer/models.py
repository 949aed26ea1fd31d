"""The cooperative CNN+LSTM+FC steering network and the single-vehicle baselines.

Architectures (``ModelConfig.arch``):

* ``coop``      -- 2x frames (x ego, x lead) through a shared conv stack, three
                   stacked LSTMs and the FC head.
* ``baselineA`` -- one current frame, conv stack straight into the FC head.
* ``baselineD`` -- difference of two ego frames into the baselineA network.
* ``baselineE`` -- two ego frames concatenated along channels (6 input channels).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .layers import Conv2DLayer, DenseLayer, LSTMLayer, lstm_sequence
from .tensor import Tensor, concat, reshape, same_padding, sub

# (filters, kernel, stride as (height, width))
CONV_STACK = (
    (24, (5, 5), (5, 4)),
    (32, (5, 5), (3, 2)),
    (48, (5, 5), (5, 4)),
    (64, (5, 5), (1, 1)),
    (128, (5, 5), (1, 2)),
)
LSTM_STACK = (64, 64, 64)
FC_HEAD = (100, 50, 10, 1)

ARCHS = ("coop", "baselineA", "baselineD", "baselineE")


@dataclass
class ModelConfig:
    arch: str = "coop"
    x: int = 8
    input_h: int = 64
    input_w: int = 64
    channels: int = 3
    conv_layers: tuple = CONV_STACK
    lstm_units: tuple = LSTM_STACK
    fc_units: tuple = FC_HEAD
    frame_gap: int = 1  # baselineD/E: distance between the two frames
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigurationError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.x < 1 or self.frame_gap < 1:
            raise ConfigurationError(f"x and frame_gap must be >= 1 (got {self.x}, {self.frame_gap})")
        if self.fc_units[-1] != 1:
            raise ConfigurationError("the FC head must end in a single output unit")
        self.conv_layers = tuple((int(f), tuple(k), tuple(s)) for f, k, s in self.conv_layers)
        self.lstm_units = tuple(self.lstm_units)
        self.fc_units = tuple(self.fc_units)

    @property
    def frames_per_sample(self) -> int:
        return {"coop": 2 * self.x, "baselineA": 1}.get(self.arch, 2)

    @property
    def in_channels(self) -> int:
        return 2 * self.channels if self.arch == "baselineE" else self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def conv_output_shapes(h: int, w: int, conv_layers=CONV_STACK) -> list[tuple[int, int, int]]:
    """Per-layer (H, W, C) under 'same' padding; raises if a layer is ill-formed."""
    shapes = []
    for i, (filters, (kh, kw), (sh, sw)) in enumerate(conv_layers, start=1):
        h, pt, pb = same_padding(h, kh, sh)
        w, pl, pr = same_padding(w, kw, sw)
        if h < 1 or w < 1:
            raise ConfigurationError(f"conv layer {i} collapses to {h}x{w}")
        shapes.append((h, w, filters))
    return shapes


def feature_length(h: int, w: int, conv_layers=CONV_STACK) -> int:
    fh, fw, fc = conv_output_shapes(h, w, conv_layers)[-1]
    return fh * fw * fc


class SteeringModel:
    def __init__(self, config: ModelConfig, seed: int | None = None):
        self.config = config
        seed = config.seed if seed is None else seed
        dtype = np.dtype(config.dtype)
        self.conv = []
        cin = config.in_channels
        for i, (filters, kernel, stride) in enumerate(config.conv_layers, start=1):
            self.conv.append(Conv2DLayer(cin, filters, kernel, stride, "relu", name=f"conv{i}", dtype=dtype))
            cin = filters
        n_feat = feature_length(config.input_h, config.input_w, config.conv_layers)
        self.feature_size = n_feat
        self.lstm = []
        if config.arch == "coop":
            n_in = n_feat
            for i, units in enumerate(config.lstm_units, start=1):
                self.lstm.append(LSTMLayer(n_in, units, name=f"lstm{i}", dtype=dtype))
                n_in = units
            n_feat = n_in
        self.fc = []
        for i, units in enumerate(config.fc_units, start=1):
            act = "linear" if i == len(config.fc_units) else "relu"
            self.fc.append(DenseLayer(n_feat, units, act, name=f"fc{i}", dtype=dtype))
            n_feat = units
        for k, layer in enumerate(self.layers()):
            layer.init(int(np.random.SeedSequence([seed, k]).generate_state(1)[0]))

    def layers(self):
        return [*self.conv, *self.lstm, *self.fc]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers():
            out.update(layer.parameters())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        if set(state) != set(params):
            raise ConfigurationError(f"state keys differ from model parameters: {sorted(set(state) ^ set(params))}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ConfigurationError(f"{k}: stored shape {state[k].shape} != model shape {p.shape}")
            p.data[...] = state[k]

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def conv_features(self, frames) -> Tensor:
        """(N, H, W, C) -> (N, feature_size), conv weights shared over N."""
        h = frames
        for layer in self.conv:
            h = layer(h)
        return reshape(h, (h.shape[0], -1))

    def head(self, feats) -> Tensor:
        for layer in self.fc:
            feats = layer(feats)
        return reshape(feats, (feats.shape[0],))

    def __call__(self, frames) -> Tensor:
        return self.forward(frames)

    def forward(self, frames) -> Tensor:
        """Batched prediction: (B, F, H, W, C) -> (B,) angles in radians."""
        cfg = self.config
        frames = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=cfg.dtype))
        if frames.ndim != 5:
            raise ConfigurationError(f"expected (batch, frames, H, W, C), got {frames.shape}")
        b, f, h, w, c = frames.shape
        if f != cfg.frames_per_sample:
            raise ConfigurationError(f"{cfg.arch} expects {cfg.frames_per_sample} frames per sample, got {f}")
        if (h, w, c) != (cfg.input_h, cfg.input_w, cfg.channels):
            raise ConfigurationError(
                f"frame shape {(h, w, c)} != configured {(cfg.input_h, cfg.input_w, cfg.channels)}"
            )
        if cfg.arch == "coop":
            feats = self.conv_features(reshape(frames, (b * f, h, w, c)))
            seq = reshape(feats, (b, f, self.feature_size))
            for i, layer in enumerate(self.lstm):
                seq = lstm_sequence(seq, layer, return_sequence=i < len(self.lstm) - 1)
            return self.head(seq)
        if cfg.arch == "baselineA":
            img = frames[:, 0]
        elif cfg.arch == "baselineD":
            img = sub(frames[:, 1], frames[:, 0])
        else:
            img = concat([frames[:, 0], frames[:, 1]], axis=-1)
        return self.head(self.conv_features(img))


def _single(model: SteeringModel, frames) -> Tensor:
    frames = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=model.config.dtype))
    return reshape(model.forward(reshape(frames, (1, *frames.shape))), ())


def _pair(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"frame shapes differ: {a.shape} vs {b.shape}")
    from .tensor import stack

    return stack([a, b], axis=0)


def forward_coop(model: SteeringModel, frames) -> Tensor:
    """frames: (2x, H, W, 3), ego t-x+1..t then lead t+dt..t+dt+x-1."""
    _require(model, "coop")
    return _single(model, frames)


def forward_baselineA(model: SteeringModel, frames) -> Tensor:
    _require(model, "baselineA")
    return _single(model, frames)


def forward_baselineD(model: SteeringModel, frame_a, frame_b) -> Tensor:
    _require(model, "baselineD")
    return _single(model, _pair(frame_a, frame_b))


def forward_baselineE(model: SteeringModel, frame_a, frame_b) -> Tensor:
    _require(model, "baselineE")
    return _single(model, _pair(frame_a, frame_b))


def _require(model, arch):
    if model.config.arch != arch:
        raise ConfigurationError(f"model is {model.config.arch!r}, not {arch!r}")


def count_params(model) -> int:
    if hasattr(model, "num_params"):
        return model.num_params()
    return sum(p.size for p in model.parameters().values())
