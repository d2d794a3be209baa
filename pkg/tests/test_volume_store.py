from pathlib import Path

import numpy as np
import pytest

from src.exceptions import FormatError, RangeError, TruncationError, VersionError
from src.models.image_volume import ImageVolume
from src.services.volume_store import decode_volume, encode_volume, load_volume, save_volume

TEST_DATA = Path(__file__).parent / "test_data"


@pytest.fixture
def fixture_volume():
    return ImageVolume(pixels=np.array([[[0.0, 0.25], [0.5, 1.0]]], dtype=np.float32), value_range=(0.0, 1.0))


def test_fixture_decodes(fixture_volume):
    """Test the checked-in fixture decodes to the known volume"""
    volume = load_volume(TEST_DATA / "volume_2x2.tdv")
    assert (volume.count, volume.height, volume.width) == (1, 2, 2)
    assert volume.value_range == (0.0, 1.0)
    assert np.array_equal(volume.pixels, fixture_volume.pixels)


def test_encoding_matches_fixture_bytes(fixture_volume):
    """Test encoding is byte-identical to the checked-in fixture"""
    assert encode_volume(fixture_volume) == (TEST_DATA / "volume_2x2.tdv").read_bytes()


def test_round_trip_is_bit_exact(tmp_path):
    """Test save then load reproduces every pixel bit for bit"""
    rng = np.random.default_rng(0)
    pixels = rng.uniform(-3, 7, size=(3, 5, 4)).astype(np.float32)
    volume = ImageVolume(pixels=pixels, value_range=(-3.0, 7.0))
    save_volume(tmp_path / "v.tdv", volume)
    loaded = load_volume(tmp_path / "v.tdv")
    assert loaded.pixels.tobytes() == pixels.tobytes()
    assert loaded.value_range == (-3.0, 7.0)
    assert (loaded.count, loaded.height, loaded.width) == (3, 5, 4)


def test_save_rejects_out_of_range_pixel(tmp_path):
    """Test a pixel outside the declared range fails validation on save"""
    pixels = np.zeros((1, 2, 2), dtype=np.float32)
    pixels[0, 1, 0] = 1.5
    with pytest.raises(RangeError, match=r"\(0, 1, 0\)"):
        save_volume(tmp_path / "bad.tdv", ImageVolume(pixels=pixels, value_range=(0.0, 1.0)))
    assert not (tmp_path / "bad.tdv").exists()


def test_truncated_payload_reports_sizes():
    """Test a short pixel section names expected and actual sizes"""
    blob = (TEST_DATA / "volume_2x2.tdv").read_bytes()
    with pytest.raises(TruncationError, match="expected 50 bytes, got 46"):
        decode_volume(blob[:-4])


def test_truncated_header():
    """Test a file shorter than the header is a truncation error"""
    with pytest.raises(TruncationError, match="header"):
        decode_volume(b"TDV1\x01")


def test_bad_magic():
    """Test foreign files are rejected"""
    blob = b"NOPE" + (TEST_DATA / "volume_2x2.tdv").read_bytes()[4:]
    with pytest.raises(FormatError, match="magic"):
        decode_volume(blob)


def test_unknown_version():
    """Test a different version is refused"""
    blob = bytearray((TEST_DATA / "volume_2x2.tdv").read_bytes())
    blob[4] = 2
    with pytest.raises(VersionError):
        decode_volume(bytes(blob))


def test_volume_accepts_single_image():
    """Test a 2-D array becomes a one-image volume"""
    volume = ImageVolume(pixels=np.zeros((3, 4)), value_range=(0.0, 1.0))
    assert (volume.count, volume.height, volume.width) == (1, 3, 4)


def test_volume_rejects_reversed_range():
    """Test lo must not exceed hi"""
    with pytest.raises(RangeError):
        ImageVolume(pixels=np.zeros((1, 2, 2)), value_range=(1.0, 0.0))
