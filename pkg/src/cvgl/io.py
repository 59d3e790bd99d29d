"""Raster and pose file formats.

Raster file: 16-byte little-endian header ``b"CVRG", u32 width, u32 height,
u32 dtype code`` followed by a row-major payload. Pose file: 12
whitespace-separated decimals, the row-major 3x4 matrix ``[R | t]``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import Pose

RASTER_MAGIC = b"CVRG"
DEPTH_F32 = 1
LABEL_U16 = 2
INTENSITY_U8 = 3

_DTYPES = {DEPTH_F32: np.dtype("<f4"), LABEL_U16: np.dtype("<u2"), INTENSITY_U8: np.dtype("u1")}
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


def encode_raster(array: np.ndarray, code: int) -> bytes:
    if code not in _DTYPES:
        raise FormatError(f"unknown raster dtype code {code}")
    array = np.asarray(array)
    if array.ndim != 2:
        raise FormatError("rasters are two-dimensional")
    h, w = array.shape
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes()
    return _HEADER.pack(RASTER_MAGIC, w, h, code) + payload


def decode_raster(data: bytes) -> tuple[np.ndarray, int]:
    if len(data) < _HEADER.size:
        raise FormatError("truncated raster header")
    magic, w, h, code = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise FormatError(f"bad raster magic {magic!r}")
    if code not in _DTYPES:
        raise FormatError(f"unknown raster dtype code {code}")
    dt = _DTYPES[code]
    expected = _HEADER.size + w * h * dt.itemsize
    if len(data) != expected:
        raise FormatError(f"raster payload size {len(data)} != {expected}")
    arr = np.frombuffer(data, dtype=dt, offset=_HEADER.size).reshape(h, w)
    return arr.astype(dt.newbyteorder("=")), code


def write_raster(path, array: np.ndarray, code: int) -> None:
    Path(path).write_bytes(encode_raster(array, code))


def read_raster(path) -> tuple[np.ndarray, int]:
    return decode_raster(Path(path).read_bytes())


def format_pose(pose: Pose) -> str:
    return " ".join(repr(float(x)) for x in pose.matrix().ravel())


def parse_pose(text: str) -> Pose:
    vals = [float(tok) for tok in text.split()]
    if len(vals) != 12:
        raise FormatError(f"pose needs 12 values, got {len(vals)}")
    m = np.array(vals).reshape(3, 4)
    return Pose(m[:, :3], m[:, 3])
