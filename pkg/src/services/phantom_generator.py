"""Synthetic clean/noisy image pairs built from superposed ellipses"""
import logging
from typing import Tuple

import numpy as np

from src.models.image_volume import ImageVolume, PhantomSpec

logger = logging.getLogger(__name__)


def ellipse_coverage(side: int, center: Tuple[float, float], axes: Tuple[float, float],
                     angle: float) -> np.ndarray:
    """Fraction of every pixel covered by a rotated ellipse.

    The edge is a one-pixel linear ramp over the first-order distance to the
    boundary, which gives anti-aliased outlines.
    """
    rows, cols = np.meshgrid(np.arange(side, dtype=np.float64) + 0.5,
                             np.arange(side, dtype=np.float64) + 0.5, indexing="ij")
    dy, dx = rows - center[0], cols - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = cos * dx + sin * dy
    v = -sin * dx + cos * dy
    a, b = axes
    level = (u / a) ** 2 + (v / b) ** 2 - 1.0
    gradient = 2.0 * np.hypot(u / (a * a), v / (b * b))
    distance = level / np.maximum(gradient, 1e-12)
    return np.clip(0.5 - distance, 0.0, 1.0)


def _clean_image(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.value_range
    image = np.full((spec.side, spec.side), lo, dtype=np.float64)
    count = int(rng.integers(spec.min_ellipses, spec.max_ellipses + 1))
    for _ in range(count):
        center = tuple(rng.uniform(0.2 * spec.side, 0.8 * spec.side, size=2))
        axes = tuple(rng.uniform(0.05 * spec.side, 0.35 * spec.side, size=2))
        angle = rng.uniform(0.0, np.pi)
        intensity = rng.uniform(*spec.intensity_range) * (hi - lo)
        image += intensity * ellipse_coverage(spec.side, center, axes, angle)
    return np.clip(image, lo, hi)


def noise_std(clean: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Per-pixel noise level: sqrt(sigma^2 + signal_noise * (clean - lo))"""
    signal = np.clip(clean - spec.value_range[0], 0.0, None)
    return np.sqrt(spec.noise_sigma ** 2 + spec.signal_noise * signal)


def generate_phantoms(spec: PhantomSpec) -> Tuple[ImageVolume, ImageVolume]:
    """Deterministic (clean, noisy) volumes for ``spec.seed``.

    The noisy volume keeps the clean range when no noise is added; otherwise
    its declared range widens to cover the actual noisy values.
    """
    rng = np.random.default_rng(spec.seed)
    clean = np.stack([_clean_image(spec, rng) for _ in range(spec.count)]).astype(np.float32)
    if spec.noise_sigma == 0 and spec.signal_noise == 0:
        noisy = clean.copy()
    else:
        std = noise_std(clean.astype(np.float64), spec)
        noisy = (clean + rng.normal(0.0, 1.0, size=clean.shape) * std).astype(np.float32)

    lo, hi = spec.value_range
    clean_volume = ImageVolume(pixels=clean, value_range=(lo, hi))
    noisy_range = (min(lo, float(noisy.min())), max(hi, float(noisy.max())))
    noisy_volume = ImageVolume(pixels=noisy, value_range=noisy_range)
    logger.info("generated %d phantoms of side %d (noise sigma %g, seed %d)",
                spec.count, spec.side, spec.noise_sigma, spec.seed)
    return clean_volume, noisy_volume
