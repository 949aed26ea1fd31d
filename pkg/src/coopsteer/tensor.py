"""Dense tensors with define-by-run reverse-mode differentiation.

Every op builds a fresh node whose ``_backward`` closure maps the output
gradient to gradients of its inputs. Node ids grow monotonically, so sorting
the reachable nodes by id is a valid topological order (inputs are always
created before the ops that consume them).
"""

from __future__ import annotations

import itertools
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ConfigurationError, NumericError, UsageError

DEBUG = os.environ.get("COOPSTEER_DEBUG", "") not in ("", "0")

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def zero_grad(self):
        self.grad = None

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_ids)
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    if DEBUG and not np.all(np.isfinite(data)) and all(np.all(np.isfinite(p.data)) for p in parents):
        raise NumericError(f"{op} produced non-finite values from finite inputs")
    return out


# -- graph ------------------------------------------------------------------
class Graph:
    """Nodes reachable from an output, in topological (creation) order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        seen = {out._id: out}
        stack = [out]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p.requires_grad and p._id not in seen:
                    seen[p._id] = p
                    stack.append(p)
        return cls(sorted(seen.values(), key=lambda t: t._id))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves listed in ``params`` that the loss does not reach get a zero grad.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in reversed(Graph.from_output(loss).nodes):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg


# -- elementwise ------------------------------------------------------------
def _check_pair(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.data.size == 1 and a.ndim == 0 or b.data.size == 1 and b.ndim == 0:
        return
    raise ConfigurationError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _fit(g: np.ndarray, like: Tensor) -> np.ndarray:
    if g.shape == like.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(like.shape)


def _coerce(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    # python scalars follow the dtype of the tensor operand
    if a.ndim == 0 and a.op == "leaf" and not a.requires_grad and a.dtype != b.dtype:
        a = Tensor(a.data.astype(b.dtype))
    if b.ndim == 0 and b.op == "leaf" and not b.requires_grad and b.dtype != a.dtype:
        b = Tensor(b.data.astype(a.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_pair(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (_fit(g, a), _fit(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_pair(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (_fit(g, a), _fit(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)
    _check_pair(a, b, "mul")
    return _node(
        a.data * b.data, (a, b), lambda g: (_fit(g * b.data, a), _fit(g * a.data, b)), "mul"
    )


def add_bias(x, b) -> Tensor:
    """x[..., n] + b[n], broadcasting the bias over leading axes."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ConfigurationError(f"add_bias: bias {b.shape} does not match trailing axis of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign to avoid overflow in exp
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype)
    return _node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def elementwise(op: str, *args) -> Tensor:
    fns = {"add": add, "mul": mul, "relu": relu, "tanh": tanh, "sigmoid": sigmoid}
    if op not in fns:
        raise ConfigurationError(f"unknown elementwise op {op!r}")
    return fns[op](*args)


# -- reductions and shape ops ---------------------------------------------
def tsum(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _node(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full_like(x.data, g / n),), "mean"
    )


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as e:
        raise ConfigurationError(f"reshape {orig} -> {shape}: {e}") from None
    return _node(y, (x,), lambda g: (g.reshape(orig),), "reshape")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(x.data[idx], (x,), bw, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    try:
        y = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as e:
        raise ConfigurationError(f"concat: {[t.shape for t in ts]}: {e}") from None
    cuts = np.cumsum(sizes)[:-1]
    return _node(y, ts, lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ConfigurationError(f"stack: {[t.shape for t in ts]}: {e}") from None
    ax = axis % y.ndim
    return _node(
        y, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))), "stack"
    )


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def same_padding(n: int, k: int, s: int) -> tuple[int, int, int]:
    """Output size and (before, after) zero padding for one spatial axis.

    The odd pad cell goes after (bottom/right).
    """
    if s < 1 or k < 1 or n < 1:
        raise ConfigurationError(f"invalid conv axis: size={n} kernel={k} stride={s}")
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x, kernels, bias, stride=(1, 1)) -> Tensor:
    """2-D cross-correlation with 'same' zero padding, channels last.

    ``x`` is (H, W, Cin) or (N, H, W, Cin); ``kernels`` is (kh, kw, Cin, Cout).
    """
    x, k, b = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or k.ndim != 4:
        raise ConfigurationError(f"conv2d: expected (N,H,W,C) input and 4-d kernels, got {x.shape}, {k.shape}")
    n, h, w, cin = xd.shape
    kh, kw, kcin, cout = k.shape
    if cin != kcin:
        raise ConfigurationError(f"conv2d: input {x.shape} has {cin} channels but kernels {k.shape} expect {kcin}")
    if b.shape != (cout,):
        raise ConfigurationError(f"conv2d: bias {b.shape} does not match {cout} filters")
    sh, sw = stride
    ho, pt, pb = same_padding(h, kh, sh)
    wo, pl, pr = same_padding(w, kw, sw)
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    s0, s1, s2, s3 = xp.strides
    cols = as_strided(xp, (n, ho, wo, kh, kw, cin), (s0, s1 * sh, s2 * sw, s1, s2, s3), writeable=False)
    cols = cols.reshape(n * ho * wo, kh * kw * cin)
    kmat = k.data.reshape(kh * kw * cin, cout)
    y = cols @ kmat
    y += b.data
    y = y.reshape(n, ho, wo, cout)
    if single:
        y = y[0]

    def bw(g):
        g2 = g.reshape(n * ho * wo, cout)
        gk = (cols.T @ g2).reshape(k.shape) if k.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :] += dcols[:, :, :, i, j, :]
            gx = gxp[:, pt : pt + h, pl : pl + w, :]
            if single:
                gx = gx[0]
        return gx, gk, gb

    return _node(y, (x, k, b), bw, "conv2d")


# -- loss -------------------------------------------------------------------
def mse_loss(pred, target) -> Tensor:
    from .errors import EmptyBatchError

    pred = as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.data.size == 0:
        raise EmptyBatchError("mse_loss on an empty batch")
    if pred.shape != tgt.shape:
        raise ConfigurationError(f"mse_loss: pred {pred.shape} vs target {tgt.shape}")
    diff = pred.data - tgt
    n = diff.size
    loss = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    return _node(loss, (pred,), lambda g: (g * 2 * diff / n,), "mse_loss")
