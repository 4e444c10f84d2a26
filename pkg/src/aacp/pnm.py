"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import os

import numpy as np


class PnmError(ValueError):
    pass


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise PnmError("truncated header")
        tokens.append(buf[i:j])
        i = j
    # exactly one whitespace byte separates header and raster
    return tokens, i + 1


def decode(buf: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PnmError("non-integer header field") from None
    if maxval != 255:
        raise PnmError(f"only 8-bit images supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    raster = buf[offset : offset + expected]
    if len(raster) != expected:
        raise PnmError(f"raster has {len(raster)} bytes, expected {expected}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.copy() if channels == 3 else arr[..., 0].copy()


def encode(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise PnmError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise PnmError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write(path, image: np.ndarray) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode(image))
    os.replace(tmp, path)
