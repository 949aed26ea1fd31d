"""Adam with bias correction.

The moments are kept as decayed sums ``m <- b1*m + g`` together with the sum
of their weights ``w1 <- b1*w1 + 1``. Then ``m / w1`` equals the usual
bias-corrected estimate ``m_std / (1 - b1**t)``, and at t=1 it is exactly g
(the textbook form ``(0.1*g)/0.1`` is not, in floating point).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import NumericError
from .tensor import Tensor

DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    t: int = 0
    w1: float = 0.0
    w2: float = 0.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state

    def m_hat(self, name: str) -> np.ndarray:
        return self.m[name] / self.w1

    def v_hat(self, name: str) -> np.ndarray:
        return self.v[name] / self.w2

    def first_moment(self, name: str) -> np.ndarray:
        """m in the conventional (1 - b1)-weighted scale."""
        return (1 - self.beta1) * self.m[name]

    def second_moment(self, name: str) -> np.ndarray:
        return (1 - self.beta2) * self.v[name]

    def hyperparameters(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(
    params: Mapping[str, Tensor], state: AdamState, grads: Mapping[str, np.ndarray] | None = None
) -> AdamState:
    """Apply one Adam update in place.

    Gradients default to each parameter's ``.grad``; a missing grad counts as
    zero. Any non-finite gradient aborts the step before anything is written.
    """
    resolved = {}
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise NumericError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            idx = np.unravel_index(int(np.argmax(bad)), g.shape)
            raise NumericError(f"non-finite gradient in {name} at index {tuple(int(i) for i in idx)}")
        resolved[name] = g
    state.t += 1
    state.w1 = state.beta1 * state.w1 + 1.0
    state.w2 = state.beta2 * state.w2 + 1.0
    for name, p in params.items():
        g = resolved[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = state.beta1 * state.m[name] + g
        state.v[name] = state.beta2 * state.v[name] + g * g
        m_hat = state.m[name] / state.w1
        v_hat = state.v[name] / state.w2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return state
