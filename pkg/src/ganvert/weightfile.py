"""Binary tensor container ("GANW", version 1).

Layout, all little-endian::

    b"GANW"  u32 version  u32 tensor_count
    repeated: u16 name_len | name (UTF-8) | u8 dtype (0 = float64) | u8 ndim
              | ndim x u32 dims | raw float64 payload

Tensors are written in sorted name order so equal maps give equal bytes.
"""

import struct

import numpy as np

MAGIC = b"GANW"
VERSION = 1
DTYPE_FLOAT64 = 0


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


def encode(tensors):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_FLOAT64, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"truncated file while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf):
    r = _Reader(bytes(buf))
    if len(r.buf) < 4 and MAGIC.startswith(r.buf):
        raise TruncatedFileError(f"file ends inside the magic ({len(r.buf)} bytes)")
    if r.buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {r.buf[:4]!r}, expected {MAGIC!r}")
    r.take(4, "magic")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode("utf-8")
        dtype, ndim = r.unpack("<BB", f"header of {name!r}")
        if dtype != DTYPE_FLOAT64:
            raise WeightFileError(f"tensor {name!r}: unsupported dtype code {dtype}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name!r}")
        n = int(np.prod(dims, dtype=np.int64))
        payload = r.take(8 * n, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(r.buf):
        raise WeightFileError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    return tensors


def save(tensors, path):
    with open(path, "wb") as f:
        f.write(encode(tensors))


def load(path):
    with open(path, "rb") as f:
        return decode(f.read())
