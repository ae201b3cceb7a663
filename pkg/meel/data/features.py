# meel/data/features.py
"""
Feature file format (little-endian throughout):

    offset  size        field
    0       8           magic b"MEELFT01"
    8       4           u32 row count
    12      4           u32 dimension
    16      4*rows*dim  float32 values, row-major

Files are written at float32 precision and promoted to float64 on read.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FeatureFormatError, TruncatedFileError
from ..utils.io import write_bytes_atomic

MAGIC = b"MEELFT01"
_HEADER = struct.Struct("<8sII")
HEADER_SIZE = _HEADER.size  # 16


def encode_features(features) -> bytes:
    M = np.asarray(features)
    if M.ndim != 2:
        raise FeatureFormatError(f"features must be a matrix, got shape {M.shape}")
    rows, dim = M.shape
    if rows == 0 or dim == 0:
        raise FeatureFormatError(f"zero dimensions in feature matrix {M.shape}")
    if rows > 0xFFFFFFFF or dim > 0xFFFFFFFF:
        raise FeatureFormatError(f"feature matrix {M.shape} too large for u32 header")
    payload = np.ascontiguousarray(M, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, rows, dim) + payload


def decode_features(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(blob) < HEADER_SIZE:
        raise TruncatedFileError(source, HEADER_SIZE, len(blob))
    magic, rows, dim = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if rows == 0 or dim == 0:
        raise FeatureFormatError(f"{source}: zero dimensions ({rows} x {dim})")
    expected = HEADER_SIZE + 4 * rows * dim
    if len(blob) < expected:
        raise TruncatedFileError(source, expected, len(blob))
    if len(blob) > expected:
        raise FeatureFormatError(
            f"{source}: {len(blob) - expected} trailing bytes after declared payload"
        )
    values = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=HEADER_SIZE)
    return values.reshape(rows, dim).astype(np.float64)


def write_features(path: str | Path, features) -> Path:
    return write_bytes_atomic(path, encode_features(features))


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    return decode_features(path.read_bytes(), str(path))
