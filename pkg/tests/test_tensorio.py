import struct
import zlib

import numpy as np
import pytest

from acir.errors import ChecksumMismatchError, FormatError, FormatVersionMismatchError
from acir.tensorio import MAGIC, read_tensor, write_tensor


@pytest.mark.parametrize("shape", [(7,), (4, 5), (2, 3, 4), (1,)])
def test_roundtrip_bit_exact(tmp_path, rng, shape):
    array = rng.normal(size=shape).astype(np.float32)
    path = tmp_path / "t.acirt"
    write_tensor(path, array)
    np.testing.assert_array_equal(read_tensor(path), array)
    first = path.read_bytes()
    write_tensor(path, array)
    assert path.read_bytes() == first  # writes are deterministic


def test_truncated_file_fails_checksum(tmp_path, rng):
    path = tmp_path / "t.acirt"
    write_tensor(path, rng.normal(size=(16,)))
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ChecksumMismatchError):
        read_tensor(path)


def test_flipped_payload_fails_checksum(tmp_path, rng):
    path = tmp_path / "t.acirt"
    write_tensor(path, rng.normal(size=(16,)))
    data = bytearray(path.read_bytes())
    data[20] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumMismatchError):
        read_tensor(path)


def test_future_version_rejected(tmp_path, rng):
    path = tmp_path / "t.acirt"
    write_tensor(path, rng.normal(size=(4,)))
    data = bytearray(path.read_bytes()[:-4])
    struct.pack_into("<I", data, len(MAGIC), 99)
    data += struct.pack("<I", zlib.crc32(bytes(data)))
    path.write_bytes(bytes(data))
    with pytest.raises(FormatVersionMismatchError):
        read_tensor(path)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "t.acirt"
    path.write_bytes(b"NOTATENSORFILE")
    with pytest.raises(FormatError):
        read_tensor(path)
