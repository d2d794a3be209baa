"""Versioned binary parameter files.

Layout, all integers little-endian::

    b"TDNW"  u16 version  u32 entry count
    per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
               u64 byte offset into the data section
    data section: float32 little-endian values, row-major, in entry order
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.exceptions import FormatError, TruncationError, VersionError
from src.models.model_config import ModelConfig
from src.services.tednet_model import TedNetParams
from src.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"TDNW"
FORMAT_VERSION = 1
_FLOAT = np.dtype("<f4")


def encode_params(tensors: Dict[str, np.ndarray]) -> bytes:
    """Serialize a name -> array mapping; arrays are stored as float32"""
    manifest = bytearray()
    payload = bytearray()
    manifest += MAGIC + struct.pack("<HI", FORMAT_VERSION, len(tensors))
    for name, array in tensors.items():
        values = np.ascontiguousarray(array, dtype=_FLOAT)
        encoded = name.encode("utf-8")
        manifest += struct.pack("<H", len(encoded)) + encoded
        manifest += struct.pack("<B", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
        manifest += struct.pack("<Q", len(payload))
        payload += values.tobytes()
    return bytes(manifest + payload)


def decode_params(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    """Parse bytes written by :func:`encode_params`"""
    if len(blob) < 10:
        raise TruncationError(10, len(blob), "header")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported parameter file version {version} (this build reads {FORMAT_VERSION})")

    cursor = 10
    entries = []

    def take(fmt: str):
        nonlocal cursor
        size = struct.calcsize(fmt)
        if cursor + size > len(blob):
            raise TruncationError(cursor + size, len(blob), "manifest")
        values = struct.unpack_from(fmt, blob, cursor)
        cursor += size
        return values

    for _ in range(count):
        (name_len,) = take("<H")
        if cursor + name_len > len(blob):
            raise TruncationError(cursor + name_len, len(blob), "manifest")
        try:
            name = blob[cursor:cursor + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor name at byte {cursor} is not valid UTF-8") from exc
        cursor += name_len
        (rank,) = take("<B")
        shape = take(f"<{rank}I") if rank else ()
        (offset,) = take("<Q")
        entries.append((name, tuple(int(s) for s in shape), int(offset)))

    data_start = cursor
    expected = data_start + sum(int(np.prod(shape)) * _FLOAT.itemsize for _, shape, _ in entries)
    if len(blob) < expected:
        raise TruncationError(expected, len(blob))
    if len(blob) > expected:
        raise FormatError(f"{len(blob) - expected} trailing bytes after the data section")

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape, offset in entries:
        size = int(np.prod(shape))
        start = data_start + offset
        if start + size * _FLOAT.itemsize > len(blob):
            raise TruncationError(start + size * _FLOAT.itemsize, len(blob), f"tensor {name!r}")
        tensors[name] = np.frombuffer(blob, dtype=_FLOAT, count=size, offset=start).reshape(shape).copy()
    return tensors


def save_params(path: Union[str, Path], params: TedNetParams) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = OrderedDict((name, t.data) for name, t in params.to_dict().items())
    path.write_bytes(encode_params(tensors))
    logger.info("saved %d tensors to %s", len(tensors), path)


def read_param_file(path: Union[str, Path]) -> "OrderedDict[str, np.ndarray]":
    """Raw manifest contents without checking them against a configuration"""
    return decode_params(Path(path).read_bytes())


def load_params(path: Union[str, Path], cfg: ModelConfig) -> TedNetParams:
    """Load parameters and validate every tensor name and shape against ``cfg``"""
    raw = read_param_file(path)
    tensors = {name: Tensor(array, dtype=np.float32) for name, array in raw.items()}
    return TedNetParams.from_dict(cfg, tensors)
