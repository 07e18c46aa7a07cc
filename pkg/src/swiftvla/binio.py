"""Little-endian block container shared by checkpoints (``SVLA``) and datasets (``SVLD``).

Layout::

    magic[4] | u32 version | u32 blob_len | blob | block* | u32 crc32

Checkpoint blocks are ``u32 name_len | name | u32 rank | u32 extent * rank |
f64 payload``. Dataset blocks insert a one-byte dtype code (``d`` float64,
``B`` uint8) before the rank so that rendered images stay compact.
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

_DTYPES = {b"d": np.dtype("<f8"), b"B": np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


def encode(magic: bytes, version: int, meta: dict, blocks, typed=False) -> bytes:
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [magic, struct.pack("<II", version, len(blob)), blob]
    for name, arr in blocks:
        arr = np.asarray(arr)
        if typed:
            dt = np.dtype("u1") if arr.dtype == np.uint8 else np.dtype("<f8")
            code = _CODES[dt]
        else:
            dt, code = np.dtype("<f8"), b""
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb + code)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(data: bytes, magic: bytes, version: int, typed=False):
    """Return (meta, {name: array}) after validating magic, CRC and version."""
    if len(data) < 16 or data[:4] != magic:
        raise FormatError(f"not a {magic.decode()} file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC mismatch: file is corrupt or truncated")
    ver, blob_len = struct.unpack_from("<II", body, 4)
    if ver != version:
        raise VersionError(f"unsupported {magic.decode()} version {ver} (expected {version})")
    off = 12
    meta = json.loads(body[off:off + blob_len])
    off += blob_len
    blocks = {}
    while off < len(body):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + nlen].decode()
        off += nlen
        dt = np.dtype("<f8")
        if typed:
            dt = _DTYPES[body[off:off + 1]]
            off += 1
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        blocks[name] = np.frombuffer(body, dtype=dt, count=n // dt.itemsize, offset=off).reshape(shape).copy()
        off += n
    return meta, blocks


def write(path, magic, version, meta, blocks, typed=False):
    data = encode(magic, version, meta, blocks, typed)
    with open(path, "wb") as fh:
        fh.write(data)


def read(path, magic, version, typed=False):
    with open(path, "rb") as fh:
        return decode(fh.read(), magic, version, typed)
