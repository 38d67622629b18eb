"""Flat-tensor file format shared by embeddings, fingerprints and weights.

Layout (all little-endian):

    magic   6 bytes  b"ACIRT1"
    version u32      currently 1
    ndim    u32
    dims    ndim x u32
    payload prod(dims) x f32
    crc32   u32      zlib CRC of every preceding byte

Round-trips are bit-exact; readers verify the magic, the version and the
checksum (a truncated file fails the checksum).
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatchError, FormatError, FormatVersionMismatchError

MAGIC = b"ACIRT1"
VERSION = 1


def write_tensor(path, array) -> None:
    array = np.asarray(array, dtype=np.float32)
    parts = [MAGIC, struct.pack("<II", VERSION, array.ndim)]
    parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
    parts.append(array.astype("<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or not data.startswith(MAGIC):
        raise FormatError(f"{path}: not a tensor file")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != VERSION:
        raise FormatVersionMismatchError(
            f"{path}: unsupported tensor format version {version}"
        )
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatchError(f"{path}: checksum mismatch (corrupt or truncated)")
    offset = len(MAGIC) + 4
    (ndim,) = struct.unpack_from("<I", data, offset)
    offset += 4
    dims = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    expected = offset + 4 * count + 4
    if len(data) != expected:
        raise FormatError(f"{path}: payload size mismatch")
    payload = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    return payload.reshape(dims).astype(np.float32)
