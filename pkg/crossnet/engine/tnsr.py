"""
TNSR binary tensor format.

Layout: magic b"CVTN", u32 LE version (1), u32 rank, rank x u32 dims,
u8 dtype tag (0 = f32, 1 = f64), then the row-major little-endian payload.
"""
import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from crossnet.exceptions import DatasetFormatError

MAGIC = b"CVTN"
VERSION = 1
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _TAGS:
        array = array.astype(np.float32)
    header = MAGIC + struct.pack("<II", VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<B", _TAGS[array.dtype])
    payload = np.ascontiguousarray(array, dtype=_DTYPES[_TAGS[array.dtype]]).tobytes()
    return header + payload


def write_tensor(fp: BinaryIO, array: np.ndarray) -> None:
    fp.write(encode_tensor(array))


def _read_exact(fp: BinaryIO, n: int, source: str) -> bytes:
    data = fp.read(n)
    if len(data) != n:
        raise DatasetFormatError(source, f"truncated tensor ({len(data)} of {n} bytes)")
    return data


def read_tensor(fp: BinaryIO, source: str = "<stream>") -> np.ndarray:
    if _read_exact(fp, 4, source) != MAGIC:
        raise DatasetFormatError(source, "bad tensor magic")
    version, rank = struct.unpack("<II", _read_exact(fp, 8, source))
    if version != VERSION:
        raise DatasetFormatError(source, f"unsupported tensor version {version}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fp, 4 * rank, source)) if rank else ()
    (tag,) = struct.unpack("<B", _read_exact(fp, 1, source))
    if tag not in _DTYPES:
        raise DatasetFormatError(source, f"unknown dtype tag {tag}")
    dtype = _DTYPES[tag]
    count = int(np.prod(dims)) if dims else 1
    payload = _read_exact(fp, count * dtype.itemsize, source)
    return np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(dims)


def decode_tensor(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    return read_tensor(io.BytesIO(blob), source)


def save_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, array)


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    try:
        with open(path, "rb") as fp:
            return read_tensor(fp, str(path))
    except FileNotFoundError as e:
        raise DatasetFormatError(path, "file not found") from e
