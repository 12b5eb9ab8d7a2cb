"""The "LASF" named-tensor container.

Layout (little-endian): magic b"LASF", format version u32, entry count u32, then per entry
name length u32, UTF-8 name, dtype tag u8 (0=f32, 1=f64), rank u32, dims u32 each, raw values.
"""
import os
import struct
from typing import Dict, Mapping, Optional

import numpy as np

from utils.errors import CheckpointFormatError
from utils.logger import logger

MAGIC = b"LASF"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def encode_checkpoint(arrays: Mapping[str, np.ndarray], dtype: Optional[str] = None) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value)
        target = np.dtype(dtype) if dtype else (value.dtype if value.dtype == np.float32 else np.dtype(np.float64))
        target = target.newbyteorder("<")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BI", _TAGS[target], value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype=target).tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointFormatError(f"truncated checkpoint at byte {offset}")
        piece = blob[offset:offset + n]
        offset += n
        return piece

    offset = 0
    if take(4) != MAGIC:
        raise CheckpointFormatError("bad magic, not a LASF checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        tag, rank = struct.unpack("<BI", take(5))
        if tag not in _DTYPES:
            raise CheckpointFormatError(f"unknown dtype tag {tag} for '{name}'")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dtype = _DTYPES[tag]
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(take(size * dtype.itemsize), dtype=dtype).reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes after last entry")
    return arrays


def atomic_write_bytes(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(blob)
    os.replace(tmp_path, path)


def write_checkpoint(path: str, arrays: Mapping[str, np.ndarray], dtype: Optional[str] = None) -> None:
    """Write tensors; `dtype` forces float32/float64 storage, otherwise each array keeps its own."""
    atomic_write_bytes(path, encode_checkpoint(arrays, dtype))
    logger.info(f"Wrote checkpoint {path} ({len(arrays)} tensors)")


def read_checkpoint(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        return decode_checkpoint(blob)
    except CheckpointFormatError as e:
        logger.error(f"Failed to read checkpoint {path}: {e}")
        raise
