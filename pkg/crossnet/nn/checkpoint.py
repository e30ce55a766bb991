"""
Checkpoint container: named TNSR blobs in one file.

Layout: magic b"CVCK", u32 LE version (1), u32 entry count, then per entry
u32 name length, UTF-8 name, u64 blob length and the TNSR blob. Entries are
written in sorted name order so identical states give identical bytes.
"""
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from crossnet.engine.tnsr import decode_tensor, encode_tensor
from crossnet.exceptions import DatasetFormatError

MAGIC = b"CVCK"
VERSION = 1


def save_container(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        encoded_name = name.encode("utf-8")
        blob = encode_tensor(arrays[name])
        chunks.append(struct.pack("<I", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<Q", len(blob)))
        chunks.append(blob)
    with open(path, "wb") as fp:
        fp.write(b"".join(chunks))


def load_container(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise DatasetFormatError(path, "checkpoint not found") from e
    if raw[:4] != MAGIC:
        raise DatasetFormatError(path, "bad checkpoint magic")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise DatasetFormatError(path, f"unsupported checkpoint version {version}")
    offset = 12
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (blob_len,) = struct.unpack_from("<Q", raw, offset)
            offset += 8
            arrays[name] = decode_tensor(raw[offset:offset + blob_len], f"{path}:{name}")
            offset += blob_len
    except struct.error as e:
        raise DatasetFormatError(path, "truncated checkpoint") from e
    return arrays
