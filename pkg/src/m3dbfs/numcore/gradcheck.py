"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``t.data``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = fn().item()
            flat[i] = orig - step
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5
) -> float:
    """Largest relative error between backprop and finite differences over ``inputs``.

    ``fn`` must rebuild the graph from the current values of ``inputs`` on
    every call.
    """
    for t in inputs:
        t.zero_grad()
    fn().backward()
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        worst = max(worst, relative_error(a, numerical_grad(fn, t, step)))
    return worst
