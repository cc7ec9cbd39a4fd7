"""
Binary tensor container used for datasets and checkpoints.

Layout (little-endian):
    magic "BCGN" | u32 version (1) | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 dtype | u8 rank |
               rank × u32 dims | row-major payload

dtype codes: 0 = float32, 1 = float64.
"""

import logging
import math
import os
import struct
from typing import Dict, Mapping, Union

import numpy as np

from bcgn.core.errors import ContainerError
from bcgn.services.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"BCGN"
VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

EntryValue = Union[np.ndarray, Tensor]


def encode_container(entries: Mapping[str, EntryValue]) -> bytes:
    """
    Serialize named arrays.

    Args:
        entries: Ordered name → array mapping (float32 or float64)

    Returns:
        Container bytes
    """
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        code = _CODE_FOR_DTYPE.get(array.dtype)
        if code is None:
            raise ContainerError(f"entry '{name}': unsupported dtype {array.dtype}")
        encoded_name = name.encode("utf-8")
        if len(encoded_name) > 0xFFFF:
            raise ContainerError(f"entry name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<BB", code, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.buffer):
            raise ContainerError(
                f"truncated container: {what} needs {count} bytes at offset {self.offset}"
            )
        chunk = self.buffer[self.offset : end]
        self.offset = end
        return chunk

    @property
    def remaining(self) -> int:
        return len(self.buffer) - self.offset

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(buffer: bytes) -> Dict[str, np.ndarray]:
    """
    Parse container bytes.

    Raises:
        ContainerError: On bad magic, unsupported version or dtype, invalid names,
            truncation or trailing bytes; the message names the byte offset
    """
    reader = _Reader(buffer)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r} at offset 0")
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version} at offset 4")
    (count,) = reader.unpack("<I", "entry count")

    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name_offset = reader.offset
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"invalid utf-8 name at offset {name_offset}") from exc
        code_offset = reader.offset
        code, rank = reader.unpack("<BB", "dtype/rank")
        if code not in DTYPE_CODES:
            raise ContainerError(f"entry '{name}': unknown dtype {code} at offset {code_offset}")
        dims = reader.unpack(f"<{rank}I", "dims") if rank else ()
        dtype = DTYPE_CODES[code]
        # python ints: no overflow for any u32 dims
        nbytes = math.prod(dims) * dtype.itemsize
        if nbytes > reader.remaining:
            raise ContainerError(
                f"truncated container: payload of '{name}' needs {nbytes} bytes "
                f"at offset {reader.offset}, {reader.remaining} left"
            )
        payload = reader.take(nbytes, f"payload of '{name}'")
        entries[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    if reader.remaining:
        raise ContainerError(f"{reader.remaining} trailing bytes at offset {reader.offset}")
    return entries


def write_container(path: str, entries: Mapping[str, EntryValue]) -> None:
    """Write a container file, creating parent directories."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_container(entries))
    logger.debug(f"Wrote {len(entries)} entries to {path}")


def read_container(path: str) -> Dict[str, np.ndarray]:
    """Read a container file."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Container file not found: {path}")
    with open(path, "rb") as f:
        return decode_container(f.read())
