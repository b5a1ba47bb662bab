"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = f()
        x[idx] = orig - step
        lo = f()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error, ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-4,
) -> float:
    """Largest relative error between autograd and finite differences over ``tensors``.

    ``loss_fn`` must rebuild the graph from the current tensor values and
    return a scalar; it is called once for the analytic pass and twice per
    entry for the numeric pass.
    """
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_grad(lambda: loss_fn().item(), t.data, step)
        worst = max(worst, relative_error(analytic, numeric))
    for t in tensors:
        t.grad = None
    return worst
