"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor, backward


def finite_diff_check(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``f`` maps a tensor to a scalar tensor. Evaluated at 64-bit precision.
    """
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    out = f(x)
    if not np.isfinite(out.data).all():
        raise NumericError("f is not finite at the check point")
    backward(out, [x])
    analytic = x.grad.reshape(-1)
    numeric = np.empty_like(analytic)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(x0.copy())).data)
        flat[i] = orig - eps
        fm = float(f(Tensor(x0.copy())).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        numeric[i] = (fp - fm) / (2 * eps)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def check_param_grads(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> dict[str, float]:
    """Finite-difference check of d(loss)/d(p) for every tensor in ``params``.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of the
    parameters. With ``max_coords`` set, each parameter is checked on a seeded
    random subset of its coordinates. Returns the max relative error per
    parameter (keyed by name or position).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss, params)
    rng = np.random.default_rng(seed)
    errors = {}
    for pos, p in enumerate(params):
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss_fn().data)
            flat[i] = orig - eps
            fm = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"loss is not finite near {p.name or pos}[{i}]")
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(analytic[i])))
        errors[p.name or str(pos)] = worst
    return errors
