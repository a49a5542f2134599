"""Dataset serialization: CSV (one sample per row) and a packed binary format.

Binary layout (little-endian throughout)::

    bytes 0..5    magic  b"RCOV1\\x00"
    bytes 6..9    uint32 d   (coordinates per sample)
    bytes 10..17  uint64 N   (number of samples)
    bytes 18..    d*N float64 payload, column-major (sample after sample)

Total size is therefore ``18 + 8*d*N`` bytes, and a save/load round trip is
bit-exact.  CSV files carry no header and one sample per row; they round-trip
through a value-preserving decimal rendering.
"""

from __future__ import annotations

import struct
import warnings
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import FileFormatError
from .tensor_linalg import as_sample_matrix

MAGIC = b"RCOV1\x00"
_HEADER = struct.Struct("<6sIQ")

PathLike = Union[str, Path]


def save_csv(X: np.ndarray, path: PathLike) -> None:
    X = as_sample_matrix(X)
    np.savetxt(path, X.T, delimiter=",", fmt="%.17g")


def load_csv(path: PathLike) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty input warns
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.size == 0:
        raise FileFormatError(f"{path}: empty CSV dataset")
    return as_sample_matrix(rows.T)


def save_binary(X: np.ndarray, path: PathLike) -> None:
    X = as_sample_matrix(X)
    d, n = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, n))
        fh.write(np.asarray(X, dtype="<f8").tobytes(order="F"))


def load_binary(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, d, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * d * n
    if len(raw) != expected:
        raise FileFormatError(
            f"{path}: payload size mismatch (have {len(raw)} bytes, want {expected})"
        )
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return flat.reshape((d, n), order="F").astype(np.float64)


def save_dataset(X: np.ndarray, path: PathLike) -> None:
    """Write ``X`` in the format implied by the extension (.csv or binary)."""
    if str(path).endswith(".csv"):
        save_csv(X, path)
    else:
        save_binary(X, path)


def load_dataset(path: PathLike) -> np.ndarray:
    if str(path).endswith(".csv"):
        return load_csv(path)
    return load_binary(path)
