"""Weight file format.

Layout, little-endian throughout::

    b"NMW1"
    u32 meta_len, meta (UTF-8 JSON, sorted keys)
    u32 n_entries
    per entry: u16 name_len, name, u8 ndim, u32 dims[ndim], u64 byte offset into data
    u64 data_len, data (float32 values, row-major, concatenated)
    u64 checksum  (first 8 bytes of BLAKE2b over every preceding byte)
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import ChecksumMismatch, TableInconsistent

MAGIC = b"NMW1"


def checksum64(data: bytes | memoryview) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def serialize_params(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_b = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    head = bytearray(MAGIC)
    head += struct.pack("<I", len(meta_b)) + meta_b
    head += struct.pack("<I", len(params))
    chunks = []
    offset = 0
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode()
        head += struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
        head += struct.pack(f"<{a.ndim}I", *a.shape) + struct.pack("<Q", offset)
        chunks.append(a.tobytes())
        offset += a.nbytes
    data = b"".join(chunks)
    body = bytes(head) + struct.pack("<Q", len(data)) + data
    return body + struct.pack("<Q", checksum64(body))


def deserialize_params(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    buf = bytes(buf)
    if len(buf) < 8 + len(MAGIC) or buf[:4] != MAGIC:
        raise TableInconsistent("not a weight file")
    body, (stored,) = buf[:-8], struct.unpack("<Q", buf[-8:])
    if checksum64(body) != stored:
        raise ChecksumMismatch("weight file checksum mismatch")
    try:
        pos = 4
        (meta_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos : pos + meta_len].decode())
        pos += meta_len
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        manifest = []
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + nl].decode()
            pos += nl
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            (off,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            manifest.append((name, shape, off))
        (data_len,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        data = body[pos : pos + data_len]
        if len(data) != data_len or pos + data_len != len(body):
            raise TableInconsistent("weight data length mismatch")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TableInconsistent(f"malformed weight file: {exc}") from None
    params = {}
    for name, shape, off in manifest:
        count = int(np.prod(shape)) if shape else 1
        if off + 4 * count > data_len:
            raise TableInconsistent(f"entry {name!r} overruns the data block")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
        params[name] = arr.astype(np.float32)
    return params, meta
