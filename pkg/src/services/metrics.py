"""Full-image quality metrics used to score denoised output"""
import logging
import math
from typing import Optional

import numpy as np
from skimage.metrics import structural_similarity

from src.exceptions import RangeError, ShapeError
from src.models.image_volume import ImageVolume
from src.models.metric_report import MetricReport, VolumeReport

logger = logging.getLogger(__name__)

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def _pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare images of shape {a.shape} and {b.shape}")
    return a, b


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square difference in the native units of the inputs"""
    a, b = _pair(a, b)
    diff = a - b
    return math.sqrt(float(np.mean(diff * diff)))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5) lying fully inside the image.

    Stabilizers are C1 = (0.01 R)^2 and C2 = (0.03 R)^2 with R = ``data_range``;
    variances use the population normalization.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {a.shape}")
    if not data_range > 0:
        raise RangeError(f"data range must be positive, got {data_range}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"images of shape {a.shape} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    value = structural_similarity(
        a, b,
        data_range=data_range,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
    )
    return float(np.clip(value, -1.0, 1.0))


def evaluate(output: np.ndarray, reference: np.ndarray, data_range: float) -> MetricReport:
    return MetricReport(ssim=ssim(output, reference, data_range), rmse=rmse(output, reference),
                        data_range=data_range)


def evaluate_volumes(output: ImageVolume, reference: ImageVolume,
                     data_range: Optional[float] = None) -> VolumeReport:
    """Score every image of ``output`` against the matching reference image.

    ``data_range`` defaults to the width of the reference's declared value range.
    """
    if output.pixels.shape != reference.pixels.shape:
        raise ShapeError(f"output volume {output.pixels.shape} does not match reference {reference.pixels.shape}")
    data_range = reference.data_range if data_range is None else data_range
    reports = [evaluate(output.pixels[i], reference.pixels[i], data_range) for i in range(output.count)]
    report = VolumeReport.from_images(reports)
    logger.debug("evaluated %d images: mean ssim %.4f, mean rmse %.4g",
                 len(reports), report.mean.ssim, report.mean.rmse)
    return report
