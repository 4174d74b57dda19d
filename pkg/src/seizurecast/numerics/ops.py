"""Differentiable building blocks for the transformer: matmul, softmax,
layer norm, GELU, sigmoid/BCE and row gather/concat."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from seizurecast.errors import DimensionError
from seizurecast.numerics.tensor import Tensor, _pair, make_node, unbroadcast

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading (batch) axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_node(out, (a, b), bw, "matmul")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match last axis {n}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, n).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bw, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return make_node(out.astype(x.dtype, copy=False), (x,), bw, "gelu")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy -[y log s(z) + (1-y) log(1-s(z))], computed from logits."""
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"bce: logits {logits.shape} vs targets {y.shape}")
    z = logits.data
    # log(1 + e^z) - y z, in overflow-safe form
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=logits.dtype)

    def bw(g):
        return ((_stable_sigmoid(z) - y) * (g / z.size),)

    return make_node(out, (logits,), bw, "bce")


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis -2.

    ``x`` is (N, d) with ``index`` (K,), or (B, N, d) with ``index`` (B, K).
    The backward pass scatter-adds into a zero array, so rows never selected
    get exactly zero gradient.
    """
    index = np.asarray(index, dtype=np.intp)
    if x.ndim == 2 and index.ndim == 1:
        sel = (index,)
    elif x.ndim == 3 and index.ndim == 2 and index.shape[0] == x.shape[0]:
        sel = (np.arange(x.shape[0])[:, None], index)
    else:
        raise DimensionError(f"take_rows: cannot index {x.shape} with {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[-2]):
        raise IndexError(f"take_rows: index out of range for {x.shape[-2]} rows")
    out = x.data[sel]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, sel, g)
        return (gx,)

    return make_node(out, (x,), bw, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tensors, bw, "concat")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(x.data, shape).copy()
    return make_node(out, (x,), lambda g: (unbroadcast(g, x.shape),), "broadcast_to")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight (+ bias); weight is stored (in_features, out_features)."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y
