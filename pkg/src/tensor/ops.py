"""Differentiable primitives.

Every function takes and returns :class:`Tensor` values, never mutates its
inputs and records a backward closure on any active :class:`GradTape`.
There is no general broadcasting: operands must agree exactly except where a
primitive documents otherwise (bias vectors, layer-norm affine terms).
"""
import math
from typing import Sequence

import numpy as np
from scipy import special

from src.exceptions import ShapeError
from src.tensor.tensor import Tensor, emit

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must be equal"""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise ShapeError(f"matmul: expected matrices of equal rank, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimension mismatch {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray):
        return g @ _swap_last(b_data), _swap_last(a_data) @ g

    return emit("matmul", a_data @ b_data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product"""
    _require_same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return emit("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = a.dtype.type(factor)
    return emit("scale", a.data * factor, (a,), lambda g: (g * factor,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the numpy name
    shape = a.shape
    return emit("sum", np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                lambda g: (np.full(shape, g, dtype=g.dtype),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {original} as {tuple(shape)}") from exc
    return emit("reshape", out, (a,), lambda g: (g.reshape(original),))


def transpose(a: Tensor, axes: Sequence[int] = None) -> Tensor:
    """Permute axes; defaults to swapping the two axes of a matrix"""
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {a.data.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return emit("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis with max subtraction"""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return emit("softmax_rows", out, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply gamma/beta"""
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine terms {gamma.shape}/{beta.shape} do not match last axis {d}")
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + a.dtype.type(eps))
    normalized = centered * inv_std
    gamma_data = gamma.data
    out = normalized * gamma_data + beta.data
    lead_axes = tuple(range(x.ndim - 1))

    def backward(g: np.ndarray):
        g_norm = g * gamma_data
        dx = inv_std * (
            g_norm
            - g_norm.mean(axis=-1, keepdims=True)
            - normalized * (g_norm * normalized).mean(axis=-1, keepdims=True)
        )
        return dx, (g * normalized).sum(axis=lead_axes), g.sum(axis=lead_axes)

    return emit("layer_norm", out, (a, gamma, beta), backward)


def linear(a: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``a @ w + b`` with ``b`` broadcast over rows"""
    if a.data.ndim != 2 or w.data.ndim != 2 or a.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: incompatible shapes input {a.shape}, weight {w.shape}, bias {b.shape}")
    a_data, w_data = a.data, w.data

    def backward(g: np.ndarray):
        return g @ w_data.T, a_data.T @ g, g.sum(axis=0)

    return emit("linear", a_data @ w_data + b.data, (a, w, b), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian error linear unit ``x * Phi(x)``"""
    x = a.data
    cdf = special.ndtr(x).astype(x.dtype)

    def backward(g: np.ndarray):
        pdf = (np.exp(-0.5 * x * x) * _INV_SQRT_2PI).astype(x.dtype)
        return (g * (cdf + x * pdf),)

    return emit("gelu", x * cdf, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return emit("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of ``(pred - target)**2``"""
    _require_same_shape("mse", pred, target)
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray((diff * diff).sum() / count, dtype=pred.dtype)

    def backward(g: np.ndarray):
        grad_pred = g * diff * pred.dtype.type(2.0 / count)
        return grad_pred, -grad_pred

    return emit("mse", out, (pred, target), backward)

