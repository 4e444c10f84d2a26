"""Central finite-difference gradient checking (run in 64-bit)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Tensor


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-3) -> np.ndarray:
    """d fn() / d x by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data.sum())
        flat[i] = orig - h
        down = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error relative to the larger gradient magnitude (floored at 1)."""
    scale = max(1.0, float(np.abs(numeric).max(initial=0.0)), float(np.abs(analytic).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3) -> float:
    """Worst relative error between tape gradients and finite differences.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    tensor; non-scalar outputs are summed.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    loss = out if out.size == 1 else out.sum()
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, t, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
