"""Central finite-difference oracle for checking analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from seizurecast.numerics.tensor import Tensor, backward


def numerical_grad(f: Callable[[], float], arr: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    num = np.linalg.norm(np.ravel(a) - np.ravel(b))
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(num / den)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-3,
) -> float:
    """Max relative error between backward() and finite differences over ``inputs``.

    ``fn(*inputs)`` must return a scalar Tensor. Inputs should be float64.
    """
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    backward(out, params=inputs)
    analytic = [t.grad.copy() for t in inputs]

    def value() -> float:
        return float(fn(*inputs).data)

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        gn = numerical_grad(value, t.data, step)
        worst = max(worst, relative_error(ga, gn))
    return worst
