"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place and restoring it."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        hi = f()
        x[i] = orig - eps
        lo = f()
        x[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)`` over the whole tensor.

    The floor sits above central-difference roundoff (about 1e-9 for O(1)
    losses), so tensors whose true gradient vanishes are compared absolutely
    instead of dividing noise by noise.
    """
    diff = float(np.linalg.norm(analytic - numeric))
    return diff / max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), floor)


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6) -> list[float]:
    """Relative error between backprop and central differences, one value per tensor.

    ``loss_fn`` must rebuild the graph from the current ``tensors`` data on every call.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value() -> float:
        with no_grad():
            return loss_fn().item()

    return [relative_error(g, numerical_gradient(value, t.data, eps)) for t, g in zip(tensors, analytic)]
