"""Soft split (unfold), fold, token/spatial reshapes and cyclic shifts.

Window values inside a token are laid out channel-major, then window-row-major:
entry ``ch * k * k + r * k + s`` of the token at grid position ``(i, j)`` holds
the pixel at row ``i * stride - padding + dilation * r`` and column
``j * stride - padding + dilation * s`` of channel ``ch`` (zero when that
position lies in the padding). Fold uses the same layout and drops padding
contributions.
"""
from functools import lru_cache

import numpy as np

from src.exceptions import ShapeError
from src.models.geometry import StageGeometry, TokenGrid
from src.tensor import Tensor, emit
from src.tensor import ops


def token_count(side: int, g: StageGeometry) -> int:
    """Tokens per spatial axis after a soft split of a ``side`` x ``side`` map"""
    return g.output_side(side)


def _unfold_array(x: np.ndarray, g: StageGeometry) -> np.ndarray:
    channels, side, _ = x.shape
    n = token_count(side, g)
    k, p = g.kernel, g.padding
    padded = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    reach = g.stride * (n - 1) + 1
    cols = np.empty((n, n, channels, k, k), dtype=x.dtype)
    for r in range(k):
        r0 = r * g.dilation
        for s in range(k):
            s0 = s * g.dilation
            window = padded[:, r0:r0 + reach:g.stride, s0:s0 + reach:g.stride]
            cols[:, :, :, r, s] = window.transpose(1, 2, 0)
    return cols.reshape(n * n, channels * k * k)


def _fold_array(cols: np.ndarray, channels: int, side: int, g: StageGeometry) -> np.ndarray:
    n = token_count(side, g)
    k, p = g.kernel, g.padding
    blocks = cols.reshape(n, n, channels, k, k)
    buffer = np.zeros((channels, side + 2 * p, side + 2 * p), dtype=cols.dtype)
    reach = g.stride * (n - 1) + 1
    for r in range(k):
        r0 = r * g.dilation
        for s in range(k):
            s0 = s * g.dilation
            buffer[:, r0:r0 + reach:g.stride, s0:s0 + reach:g.stride] += blocks[:, :, :, r, s].transpose(2, 0, 1)
    return buffer[:, p:p + side, p:p + side]


@lru_cache(maxsize=64)
def _cached_counts(side: int, g: StageGeometry) -> np.ndarray:
    n = token_count(side, g)
    ones = np.ones((n * n, g.kernel * g.kernel), dtype=np.float64)
    counts = _fold_array(ones, 1, side, g)[0]
    counts.flags.writeable = False
    return counts


def contribution_counts(side: int, g: StageGeometry) -> np.ndarray:
    """Number of windows sampling each pixel of a ``side`` x ``side`` map"""
    return _cached_counts(side, g).copy()


def soft_split(img: Tensor, g: StageGeometry) -> TokenGrid:
    """Unfold a ``c x h x w`` map into overlapping dilated window tokens"""
    if len(img.shape) != 3:
        raise ShapeError(f"soft_split expects a c x h x w map, got {img.shape}")
    channels, h, w = img.shape
    if h != w:
        raise ShapeError(f"soft_split needs a square map, got {h}x{w}")
    n = token_count(h, g)

    def backward(grad: np.ndarray):
        return (_fold_array(grad, channels, h, g),)

    tokens = emit("soft_split", _unfold_array(img.data, g), (img,), backward)
    return TokenGrid(tokens=tokens, grid_h=n, grid_w=n)


def fold(tg: TokenGrid, c: int, side: int, g: StageGeometry, normalize: bool = True) -> Tensor:
    """Scatter-add tokens back to a ``c x side x side`` map.

    With ``normalize`` every pixel is divided by its contribution count, which
    makes ``fold(soft_split(x))`` reproduce ``x``; the geometry must then sample
    every pixel of ``side``.
    """
    n = token_count(side, g)
    if tg.d != c * g.kernel * g.kernel or tg.grid_h != n or tg.grid_w != n:
        raise ShapeError(
            f"fold: tokens {tg.tokens.shape} on grid {tg.grid_h}x{tg.grid_w} do not match "
            f"{c} channels, kernel {g.kernel} and {n}x{n} windows for side {side}"
        )
    dtype = tg.tokens.dtype
    out = _fold_array(tg.tokens.data, c, side, g)
    if normalize:
        g.check_coverage(side)
        inv_counts = (1.0 / _cached_counts(side, g)).astype(dtype)
        out = out * inv_counts

        def backward(grad: np.ndarray):
            return (_unfold_array(grad * inv_counts, g),)
    else:
        def backward(grad: np.ndarray):
            return (_unfold_array(grad, g),)

    return emit("fold", out, (tg.tokens,), backward)


def cyclic_shift(img: Tensor, pixels: int) -> Tensor:
    """Roll both spatial axes by ``pixels`` (positive moves content down/right)"""
    if len(img.shape) != 3:
        raise ShapeError(f"cyclic_shift expects a c x h x w map, got {img.shape}")
    out = np.roll(img.data, (pixels, pixels), axis=(1, 2))
    return emit("cyclic_shift", out, (img,), lambda grad: (np.roll(grad, (-pixels, -pixels), axis=(1, 2)),))


def inverse_cyclic_shift(img: Tensor, pixels: int) -> Tensor:
    return cyclic_shift(img, -pixels)


def tokens_to_spatial(tg: TokenGrid) -> Tensor:
    """``n x d`` tokens to a ``d x grid_h x grid_w`` map; token ``i*grid_w+j`` lands at ``(i, j)``"""
    return ops.reshape(ops.transpose(tg.tokens), (tg.d, tg.grid_h, tg.grid_w))


def spatial_to_tokens(img: Tensor) -> TokenGrid:
    if len(img.shape) != 3:
        raise ShapeError(f"spatial_to_tokens expects a c x h x w map, got {img.shape}")
    channels, h, w = img.shape
    tokens = ops.transpose(ops.reshape(img, (channels, h * w)))
    return TokenGrid(tokens=tokens, grid_h=h, grid_w=w)
