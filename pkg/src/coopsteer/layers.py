"""Convolution, LSTM and dense layers built from tensor primitives."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, EmptySequenceError
from .tensor import Tensor, add, add_bias, concat, conv2d, matmul, mul, relu, sigmoid, stack, tanh

ACTIVATIONS = {"relu": relu, "tanh": tanh, "linear": lambda t: t}


class Layer:
    name: str

    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def init(self, seed: int) -> "Layer":
        init_params(self, seed)
        return self

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters().values())


class Conv2DLayer(Layer):
    def __init__(self, cin, cout, kernel=(5, 5), stride=(1, 1), activation="relu", name="conv", dtype=np.float64):
        self.name = name
        self.stride = tuple(stride)
        self.activation = activation
        kh, kw = kernel
        self.kernels = Tensor(np.zeros((kh, kw, cin, cout), dtype=dtype), requires_grad=True, name=f"{name}.kernels")
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def parameters(self):
        return {self.kernels.name: self.kernels, self.bias.name: self.bias}

    def fans(self):
        kh, kw, cin, cout = self.kernels.shape
        return kh * kw * cin, kh * kw * cout

    def __call__(self, x):
        return ACTIVATIONS[self.activation](conv2d(x, self.kernels, self.bias, self.stride))


class DenseLayer(Layer):
    def __init__(self, n_in, n_out, activation="relu", name="fc", dtype=np.float64):
        self.name = name
        self.activation = activation
        self.weight = Tensor(np.zeros((n_in, n_out), dtype=dtype), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True, name=f"{name}.bias")

    def parameters(self):
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def fans(self):
        return self.weight.shape

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        y = ACTIVATIONS[self.activation](add_bias(matmul(x, self.weight), self.bias))
        return y.reshape(-1) if squeeze else y


GATES = ("i", "f", "o", "g")


class LSTMLayer(Layer):
    """Forget-gate LSTM without peepholes; gate weights act on [x_t; h_prev]."""

    def __init__(self, input_size, hidden_size=64, name="lstm", dtype=np.float64):
        self.name = name
        self.input_size = input_size
        self.hidden_size = hidden_size
        shape = (input_size + hidden_size, hidden_size)
        self.W = {
            g: Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=f"{name}.W_{g}") for g in GATES
        }
        self.b = {
            g: Tensor(np.zeros(hidden_size, dtype=dtype), requires_grad=True, name=f"{name}.b_{g}") for g in GATES
        }

    def parameters(self):
        out = {}
        for g in GATES:
            out[self.W[g].name] = self.W[g]
        for g in GATES:
            out[self.b[g].name] = self.b[g]
        return out

    def fans(self):
        return self.input_size + self.hidden_size, self.hidden_size


def init_params(layer: Layer, seed: int) -> Layer:
    """Glorot-uniform weights, zero biases, unit LSTM forget bias."""
    rng = np.random.default_rng(seed)
    fan_in, fan_out = layer.fans()
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    for name, p in layer.parameters().items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("b"):
            p.data[...] = 1.0 if leaf == "b_f" else 0.0
        else:
            p.data[...] = rng.uniform(-bound, bound, size=p.shape)
    return layer


def lstm_step(x_t, h_prev, c_prev, layer: LSTMLayer):
    """One LSTM step. Accepts a single vector or a (batch, features) block."""
    x_t, h_prev, c_prev = (v if isinstance(v, Tensor) else Tensor(v) for v in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != layer.input_size or h_prev.shape[-1] != layer.hidden_size or c_prev.shape != h_prev.shape:
        raise ConfigurationError(
            f"{layer.name}: x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} vs "
            f"input {layer.input_size}, hidden {layer.hidden_size}"
        )
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = x_t.reshape(1, -1), h_prev.reshape(1, -1), c_prev.reshape(1, -1)
    xh = concat([x_t, h_prev], axis=1)

    def gate(g):
        return add_bias(matmul(xh, layer.W[g]), layer.b[g])

    i, f, o = sigmoid(gate("i")), sigmoid(gate("f")), sigmoid(gate("o"))
    g = tanh(gate("g"))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    if single:
        return h_t.reshape(-1), c_t.reshape(-1)
    return h_t, c_t


def lstm_sequence(xs, layer: LSTMLayer, return_sequence: bool = True) -> Tensor:
    """Run ``layer`` over ``xs`` of shape (T, input) or (batch, T, input) from zero state."""
    xs = xs if isinstance(xs, Tensor) else Tensor(xs)
    batched = xs.ndim == 3
    steps = xs.shape[1] if batched else xs.shape[0]
    if steps == 0:
        raise EmptySequenceError(f"{layer.name}: empty input sequence")
    state_shape = (xs.shape[0], layer.hidden_size) if batched else (layer.hidden_size,)
    h = Tensor(np.zeros(state_shape, dtype=xs.dtype))
    c = Tensor(np.zeros(state_shape, dtype=xs.dtype))
    outs = []
    for t in range(steps):
        h, c = lstm_step(xs[:, t] if batched else xs[t], h, c, layer)
        outs.append(h)
    if not return_sequence:
        return h
    return stack(outs, axis=1 if batched else 0)
