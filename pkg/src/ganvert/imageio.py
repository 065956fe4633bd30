"""8-bit binary PPM (P6) read/write for images in ``[-1, 1]``.

Bytes map to values by ``v -> 2v/255 - 1``; values map back by
``round((t + 1) * 255 / 2)`` clamped to ``[0, 255]``.  Writing an image
that was read from a file reproduces that file exactly.
"""

from __future__ import annotations

import re

import numpy as np


class ImageFormatError(ValueError):
    pass


_HEADER = re.compile(rb"P6(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def to_bytes(image):
    """``(3, H, W)`` float image -> ``(H, W, 3)`` uint8 array."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ImageFormatError(f"PPM needs a (3, H, W) image, got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ImageFormatError("image has non-finite entries")
    q = np.clip(np.round((image + 1.0) * 255.0 / 2.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(q.transpose(1, 2, 0))


def from_bytes(pixels):
    return pixels.transpose(2, 0, 1).astype(np.float64) * (2.0 / 255.0) - 1.0


def encode_ppm(image):
    q = to_bytes(image)
    h, w, _ = q.shape
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def decode_ppm(data, shape=None):
    m = _HEADER.match(data)
    if not m:
        raise ImageFormatError("malformed PPM header (expected binary P6)")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PPM is supported, maxval={maxval}")
    body = data[m.end():]
    if len(body) != w * h * 3:
        raise ImageFormatError(f"PPM body has {len(body)} bytes, expected {w * h * 3}")
    image = from_bytes(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3))
    if shape is not None and image.shape != tuple(shape):
        raise ImageFormatError(f"image shape {image.shape} does not match generator output {tuple(shape)}")
    return image


def write_ppm(path, image):
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


def read_ppm(path, shape=None):
    with open(path, "rb") as f:
        return decode_ppm(f.read(), shape)
