"""Overlapped-patch inference over images larger than the model patch.

The image is reflect-padded by ``P/4`` on every side (plus enough extra at
the bottom and right to make each padded side a multiple of ``P/2``), tiled
with stride ``P/2``, and only the central ``(P/2)^2`` block of each patch
output is kept. The kept blocks partition the original image exactly.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.exceptions import ShapeError
from src.models.image_volume import ImageVolume
from src.models.model_config import ModelConfig
from src.services.tednet_model import TedNetParams, forward
from src.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TilePlan:
    height: int
    width: int
    patch_side: int
    margin: int
    crop: int
    extra_bottom: int
    extra_right: int
    placements: Tuple[Tuple[int, int], ...]

    @property
    def padded_shape(self) -> Tuple[int, int]:
        return (self.height + 2 * self.margin + self.extra_bottom,
                self.width + 2 * self.margin + self.extra_right)

    def crop_box(self, row: int, col: int) -> Tuple[int, int, int, int]:
        """Output rectangle (top, left, bottom, right) written by the patch at ``(row, col)``"""
        return row, col, min(row + self.crop, self.height), min(col + self.crop, self.width)


def plan_tiles(height: int, width: int, patch_side: int) -> TilePlan:
    """Top-left corners, in padded coordinates, of every patch to evaluate"""
    if patch_side % 4:
        raise ShapeError(f"patch side {patch_side} must be divisible by 4 for center-crop tiling")
    if height < 1 or width < 1:
        raise ShapeError(f"image must be non-empty, got {height}x{width}")
    crop = patch_side // 2
    rows = math.ceil(height / crop)
    cols = math.ceil(width / crop)
    placements = tuple((i * crop, j * crop) for i in range(rows) for j in range(cols))
    return TilePlan(
        height=height,
        width=width,
        patch_side=patch_side,
        margin=patch_side // 4,
        crop=crop,
        extra_bottom=rows * crop - height,
        extra_right=cols * crop - width,
        placements=placements,
    )


def coverage(plan: TilePlan) -> np.ndarray:
    """How many kept crops write each output pixel; all ones for a valid plan"""
    counts = np.zeros((plan.height, plan.width), dtype=np.int64)
    for row, col in plan.placements:
        top, left, bottom, right = plan.crop_box(row, col)
        counts[top:bottom, left:right] += 1
    return counts


def pad_image(image: np.ndarray, plan: TilePlan) -> np.ndarray:
    m = plan.margin
    return np.pad(image, ((m, m + plan.extra_bottom), (m, m + plan.extra_right)), mode="reflect")


def tile_denoise(image: np.ndarray, params: TedNetParams, cfg: ModelConfig,
                 workers: Optional[int] = None) -> np.ndarray:
    """Denoise a 2-D image of any size patch by patch.

    Patches are evaluated on a thread pool of ``workers`` threads; crops are
    written in placement order into disjoint regions.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ShapeError(f"tile_denoise expects a 2-D image, got shape {image.shape}")
    if cfg.channels != 1:
        raise ShapeError(f"tiling works on single-channel models, configuration has {cfg.channels} channels")
    plan = plan_tiles(image.shape[0], image.shape[1], cfg.patch_side)
    padded = pad_image(image, plan)
    p, m = cfg.patch_side, plan.margin

    def run(placement: Tuple[int, int]) -> np.ndarray:
        row, col = placement
        patch = padded[row:row + p, col:col + p]
        out = forward(Tensor(patch[None], dtype=np.float32), params, cfg)
        return out.data[0, m:m + plan.crop, m:m + plan.crop]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        crops: List[np.ndarray] = list(pool.map(run, plan.placements))
    logger.debug("evaluated %d patches for a %dx%d image", len(crops), image.shape[0], image.shape[1])

    rows = plan.height + plan.extra_bottom
    cols = plan.width + plan.extra_right
    output = np.empty((rows, cols), dtype=np.float32)
    for (row, col), crop in zip(plan.placements, crops):
        output[row:row + plan.crop, col:col + plan.crop] = crop
    return output[:plan.height, :plan.width]


def denoise_volume(volume: ImageVolume, params: TedNetParams, cfg: ModelConfig,
                   workers: Optional[int] = None) -> ImageVolume:
    """Tile-denoise every image; the declared range widens to cover the output"""
    pixels = np.stack([tile_denoise(volume.pixels[i], params, cfg, workers) for i in range(volume.count)])
    lo, hi = volume.value_range
    return ImageVolume(pixels=pixels, value_range=(min(lo, float(pixels.min())), max(hi, float(pixels.max()))))
