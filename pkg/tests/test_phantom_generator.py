import numpy as np
import pytest
from pydantic import ValidationError

from src.models.image_volume import PhantomSpec
from src.services.phantom_generator import ellipse_coverage, generate_phantoms, noise_std


def test_ellipse_coverage_area():
    """Test coverage sums to the ellipse area and saturates inside"""
    cover = ellipse_coverage(64, (32.0, 32.0), (20.0, 10.0), 0.3)
    assert cover[32, 32] == 1.0
    assert cover[0, 0] == 0.0
    assert cover.sum() == pytest.approx(np.pi * 20 * 10, rel=0.02)
    assert cover.min() >= 0.0 and cover.max() <= 1.0


def test_same_seed_is_identical():
    """Test generation is deterministic per seed"""
    spec = PhantomSpec(side=64, count=2, patch_side=32, seed=7)
    clean_a, noisy_a = generate_phantoms(spec)
    clean_b, noisy_b = generate_phantoms(spec)
    assert np.array_equal(clean_a.pixels, clean_b.pixels)
    assert np.array_equal(noisy_a.pixels, noisy_b.pixels)
    _, other = generate_phantoms(spec.model_copy(update={"seed": 8}))
    assert not np.array_equal(noisy_a.pixels, other.pixels)


def test_clean_stays_in_range():
    """Test clean phantoms respect the declared value range"""
    clean, _ = generate_phantoms(PhantomSpec(side=64, count=4, patch_side=32, value_range=(-1.0, 3.0)))
    assert clean.value_range == (-1.0, 3.0)
    clean.check_range()
    assert clean.pixels.max() > -1.0


def test_zero_noise_is_bit_identical():
    """Test sigma = 0 makes the noisy volume an exact copy"""
    clean, noisy = generate_phantoms(PhantomSpec(side=64, count=2, patch_side=32, noise_sigma=0.0))
    assert np.array_equal(clean.pixels, noisy.pixels)
    assert noisy.value_range == clean.value_range


def test_noise_level_matches_sigma():
    """Test the empirical residual deviation is within 5% of sigma"""
    clean, noisy = generate_phantoms(PhantomSpec(side=256, count=1, noise_sigma=0.05, seed=1))
    residual = noisy.pixels.astype(np.float64) - clean.pixels
    assert residual.std() == pytest.approx(0.05, rel=0.05)
    assert abs(residual.mean()) < 0.005


def test_noisy_range_covers_values():
    """Test the noisy volume's declared range widens to its actual values"""
    _, noisy = generate_phantoms(PhantomSpec(side=64, count=2, patch_side=32, noise_sigma=0.2))
    noisy.check_range()
    lo, hi = noisy.value_range
    assert lo <= 0.0 and hi >= 1.0


def test_signal_dependent_noise():
    """Test signal noise leaves the background untouched and perturbs bright pixels"""
    spec = PhantomSpec(side=64, count=1, patch_side=32, noise_sigma=0.0, signal_noise=0.01,
                       min_ellipses=1, max_ellipses=1, seed=3)
    clean, noisy = generate_phantoms(spec)
    background = clean.pixels == 0.0
    assert background.any()
    assert np.array_equal(noisy.pixels[background], clean.pixels[background])
    assert not np.array_equal(noisy.pixels[~background], clean.pixels[~background])


def test_noise_std_formula():
    """Test the per-pixel level combines both noise terms"""
    spec = PhantomSpec(noise_sigma=0.3, signal_noise=0.5, value_range=(1.0, 3.0))
    std = noise_std(np.array([1.0, 3.0]), spec)
    assert std.tolist() == pytest.approx([0.3, np.sqrt(0.09 + 1.0)])


@pytest.mark.parametrize("update", [
    {"min_ellipses": 5, "max_ellipses": 2},
    {"side": 32, "patch_side": 64},
    {"intensity_range": (0.5, 0.1)},
    {"value_range": (1.0, 1.0)},
    {"noise_sigma": -0.1},
])
def test_spec_validation(update):
    """Test inconsistent phantom settings are rejected"""
    values = dict(side=64, patch_side=32)
    values.update(update)
    with pytest.raises(ValidationError):
        PhantomSpec(**values)
