from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.exceptions import RangeError, ShapeError


@dataclass
class ImageVolume:
    """A stack of single-channel images (count x height x width) with its value range"""
    pixels: np.ndarray
    value_range: Tuple[float, float]

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[None]
        if self.pixels.ndim != 3 or 0 in self.pixels.shape:
            raise ShapeError(f"volume pixels must be count x height x width, got {self.pixels.shape}")
        lo, hi = float(self.value_range[0]), float(self.value_range[1])
        if not lo <= hi:
            raise RangeError(f"value range lower bound {lo} exceeds upper bound {hi}")
        self.value_range = (lo, hi)

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def data_range(self) -> float:
        return self.value_range[1] - self.value_range[0]

    def check_range(self) -> None:
        """Raise RangeError when any pixel is outside the declared range"""
        lo, hi = self.value_range
        if not np.all(np.isfinite(self.pixels)):
            raise RangeError("volume holds non-finite pixels")
        below = self.pixels < lo
        above = self.pixels > hi
        if below.any() or above.any():
            index = tuple(int(i) for i in np.argwhere(below | above)[0])
            raise RangeError(
                f"pixel {index} = {float(self.pixels[index])} outside declared range [{lo}, {hi}]"
            )


class PhantomSpec(BaseModel):
    """Synthetic ellipse phantoms paired with additive Gaussian noise"""
    model_config = ConfigDict(frozen=True)

    side: int = Field(default=128, ge=1)
    count: int = Field(default=8, ge=1)
    min_ellipses: int = Field(default=3, ge=1)
    max_ellipses: int = Field(default=8, ge=1)
    intensity_range: Tuple[float, float] = (0.1, 0.5)
    value_range: Tuple[float, float] = (0.0, 1.0)
    noise_sigma: float = Field(default=0.05, ge=0.0)
    signal_noise: float = Field(default=0.0, ge=0.0)
    patch_side: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "PhantomSpec":
        if self.min_ellipses > self.max_ellipses:
            raise ValueError(f"min_ellipses {self.min_ellipses} exceeds max_ellipses {self.max_ellipses}")
        if self.side < self.patch_side:
            raise ValueError(f"phantom side {self.side} is smaller than patch side {self.patch_side}")
        if self.intensity_range[0] > self.intensity_range[1]:
            raise ValueError(f"intensity range {self.intensity_range} is reversed")
        if self.value_range[0] >= self.value_range[1]:
            raise ValueError(f"value range {self.value_range} is empty")
        return self
