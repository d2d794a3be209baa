"""Image-volume container files.

Layout, all little-endian::

    b"TDV1"  u16 version  u32 width  u32 height  u32 count
    f64 range low  f64 range high
    count x height x width float32 pixels, row-major
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.exceptions import FormatError, TruncationError, VersionError
from src.models.image_volume import ImageVolume

logger = logging.getLogger(__name__)

MAGIC = b"TDV1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIdd")
_PIXEL = np.dtype("<f4")


def encode_volume(volume: ImageVolume) -> bytes:
    """Serialize ``volume``; raises RangeError if a pixel lies outside its range"""
    volume.check_range()
    lo, hi = volume.value_range
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, volume.width, volume.height, volume.count, lo, hi)
    return header + np.ascontiguousarray(volume.pixels, dtype=_PIXEL).tobytes()


def decode_volume(blob: bytes) -> ImageVolume:
    if len(blob) < _HEADER.size:
        raise TruncationError(_HEADER.size, len(blob), "header")
    magic, version, width, height, count, lo, hi = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported volume file version {version} (this build reads {FORMAT_VERSION})")
    if min(width, height, count) < 1:
        raise FormatError(f"volume dimensions must be positive, got {width}x{height}x{count}")
    expected = _HEADER.size + width * height * count * _PIXEL.itemsize
    if len(blob) < expected:
        raise TruncationError(expected, len(blob))
    if len(blob) > expected:
        raise FormatError(f"{len(blob) - expected} trailing bytes after the pixel data")
    pixels = np.frombuffer(blob, dtype=_PIXEL, offset=_HEADER.size).reshape(count, height, width)
    volume = ImageVolume(pixels=pixels.astype(np.float32), value_range=(lo, hi))
    volume.check_range()
    return volume


def save_volume(path: Union[str, Path], volume: ImageVolume) -> None:
    path = Path(path)
    blob = encode_volume(volume)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    logger.debug("wrote %d images of %dx%d to %s", volume.count, volume.height, volume.width, path)


def load_volume(path: Union[str, Path]) -> ImageVolume:
    return decode_volume(Path(path).read_bytes())
