"""Binary PGM (P5) / PPM (P6) reading and writing.

Dependency-free and bit-exact, which is all the desk-scale corpora need.
Pixels are exposed as float arrays in [0, 1]; files with maxval up to
65535 are readable, writing always uses maxval 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def _read_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset one byte past the final separator.
    """
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise FormatError("truncated image header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Load a P5/P6 file as (H, W) or (H, W, 3) floats in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: expected binary PGM (P5) or PPM (P6)")
    tokens, offset = _read_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: bad header") from exc
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    offset += 2
    channels = 3 if data[:2] == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = width * height * channels
    payload = data[offset : offset + count * dtype.itemsize]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload, dtype=dtype).astype(np.float64) / maxval
    if channels == 3:
        return pixels.reshape(height, width, 3)
    return pixels.reshape(height, width)


def write_image(path, image) -> None:
    """Write floats in [0, 1] as P5 (2-D input) or P6 ((H, W, 3) input)."""
    image = np.asarray(image, dtype=np.float64)
    quantised = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if image.ndim == 2:
        magic, (h, w) = b"P5", image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        magic, (h, w) = b"P6", image.shape[:2]
    else:
        raise FormatError(f"cannot write image of shape {image.shape}")
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    Path(path).write_bytes(header + quantised.tobytes())
