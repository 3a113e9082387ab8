"""Flat binary container for dense complex matrices.

Layout (documented for interchange; see README "Matrix container format"):

* bytes 0-3   magic ``b"QKRM"``
* bytes 4-7   format version, uint32 little-endian (currently 1)
* bytes 8-15  matrix dimension, uint64 little-endian
* bytes 16-   dim*dim complex128 entries, row-major, little-endian
              (real part then imaginary part, 8 bytes each)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"QKRM"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class MatrixFormatError(ValueError):
    """File does not hold a valid matrix container."""


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Write a square complex matrix to the binary container format."""
    matrix = np.ascontiguousarray(matrix, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise MatrixFormatError(f"expected a square matrix, got shape {matrix.shape}")
    payload = matrix.astype("<c16", copy=False).tobytes(order="C")
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, VERSION, matrix.shape[0]))
        handle.write(payload)


def load_matrix(path: str | Path) -> np.ndarray:
    """Read a matrix written by :func:`save_matrix`."""
    with open(path, "rb") as handle:
        header = handle.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise MatrixFormatError("truncated header")
        magic, version, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise MatrixFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise MatrixFormatError(f"unsupported version {version}")
        payload = handle.read()
    expected = 16 * dim * dim
    if len(payload) != expected:
        raise MatrixFormatError(
            f"payload holds {len(payload)} bytes, expected {expected} for dim {dim}"
        )
    flat = np.frombuffer(payload, dtype="<c16")
    return flat.astype(np.complex128).reshape(dim, dim)
