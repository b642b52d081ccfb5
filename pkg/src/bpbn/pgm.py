"""Minimal binary PGM (P5) / PPM (P6) reader and writer.

Only 8-bit maxval-255 images; grayscale loads as (H, W, 1), RGB as
(H, W, 3).  Header comments (#) are honored.  Raw tensor files cover
everything these formats cannot.
"""

from __future__ import annotations

import numpy as np

from .errors import ImageFormatError

__all__ = ["read_image", "write_image"]


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """First `count` whitespace-separated tokens, skipping # comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ImageFormatError("truncated image header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # single whitespace after maxval precedes payload


def read_image(path) -> np.ndarray:
    """Load a binary PGM/PPM into an (H, W, C) uint8 tensor."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(
            f"unsupported image magic {magic!r} (binary PGM/PPM only)"
        )
    tokens, offset = _read_header_tokens(data[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise ImageFormatError(f"bad image header: {e}") from e
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images supported, maxval={maxval}")
    payload = data[2 + offset :]
    need = h * w * channels
    if len(payload) < need:
        raise ImageFormatError("truncated image payload")
    return (
        np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, channels).copy()
    )


def write_image(path, img: np.ndarray) -> None:
    """Write an (H, W, 1) or (H, W, 3) uint8 tensor as binary PGM/PPM."""
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageFormatError(f"cannot write image of shape {img.shape}")
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())
