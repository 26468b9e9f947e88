"""Byte stream <-> pure ACGT payload plus an exception side channel.

Only the uppercase bytes ``A C G T`` become payload bases (codes 0..3).
Everything else, lowercase included, is recorded verbatim with its offset in
the original stream, so :func:`restore` is an exact inverse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, TableInconsistent

BASES = b"ACGT"
_NOT_A_BASE = 255

_LUT = np.full(256, _NOT_A_BASE, dtype=np.uint8)
for _code, _byte in enumerate(BASES):
    _LUT[_byte] = _code
_ASCII = np.frombuffer(BASES, dtype=np.uint8)

_EXC_DTYPE = np.dtype([("pos", "<u8"), ("byte", "u1")])


@dataclass(frozen=True)
class NucleotideStream:
    payload: np.ndarray  # uint8 codes in {0,1,2,3}

    @property
    def length_n(self) -> int:
        return int(self.payload.size)

    @classmethod
    def from_text(cls, text: str | bytes) -> "NucleotideStream":
        raw = text.encode() if isinstance(text, str) else bytes(text)
        stream, exc = canonicalize(raw)
        if exc:
            raise ValueError("text contains non-ACGT bytes")
        return stream

    def to_text(self) -> str:
        return _ASCII[self.payload].tobytes().decode()


@dataclass(frozen=True)
class ExceptionChannel:
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))

    def __len__(self) -> int:
        return int(self.positions.size)

    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.positions.tolist(), self.values.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExceptionChannel):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.values, other.values
        )

    def to_bytes(self) -> bytes:
        """Count as u64 LE, then per entry a u64 LE position and one raw byte."""
        rec = np.empty(len(self), dtype=_EXC_DTYPE)
        rec["pos"] = self.positions
        rec["byte"] = self.values
        return struct.pack("<Q", len(self)) + rec.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes | memoryview, offset: int = 0) -> tuple["ExceptionChannel", int]:
        """Parse a serialized channel at ``offset``; returns (channel, new offset)."""
        if offset + 8 > len(buf):
            raise TableInconsistent("exception channel header truncated")
        (count,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        end = offset + count * _EXC_DTYPE.itemsize
        if end > len(buf):
            raise TableInconsistent("exception channel truncated")
        rec = np.frombuffer(buf, dtype=_EXC_DTYPE, count=count, offset=offset)
        chan = cls(rec["pos"].astype(np.uint64), rec["byte"].astype(np.uint8))
        return chan, end


def canonicalize(raw: bytes) -> tuple[NucleotideStream, ExceptionChannel]:
    arr = np.frombuffer(bytes(raw), dtype=np.uint8)
    codes = _LUT[arr]
    is_base = codes != _NOT_A_BASE
    payload = codes[is_base]
    where = np.flatnonzero(~is_base)
    exc = ExceptionChannel(where.astype(np.uint64), arr[where].copy())
    return NucleotideStream(payload), exc


def restore(stream: NucleotideStream, exc: ExceptionChannel, original_len: int) -> bytes:
    n_exc = len(exc)
    if stream.length_n + n_exc != original_len:
        raise LengthMismatch(
            f"payload {stream.length_n} + exceptions {n_exc} != original length {original_len}"
        )
    if n_exc:
        pos = exc.positions
        if int(pos.max()) >= original_len:
            raise LengthMismatch("exception position beyond original length")
        if n_exc > 1 and not np.all(pos[1:] > pos[:-1]):
            raise LengthMismatch("exception positions not strictly increasing")
    out = np.empty(original_len, dtype=np.uint8)
    mask = np.ones(original_len, dtype=bool)
    if n_exc:
        idx = exc.positions.astype(np.intp)
        out[idx] = exc.values
        mask[idx] = False
    out[mask] = _ASCII[stream.payload]
    return out.tobytes()


def pack_bases(codes: np.ndarray) -> bytes:
    """Pack base codes 2 bits each, first base in the high bits, zero padded."""
    codes = np.asarray(codes, dtype=np.uint8)
    pad = (-codes.size) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, np.uint8)])
    q = codes.reshape(-1, 4)
    packed = (q[:, 0] << 6) | (q[:, 1] << 4) | (q[:, 2] << 2) | q[:, 3]
    return packed.astype(np.uint8).tobytes()


def unpack_bases(buf: bytes, n: int) -> np.ndarray:
    if len(buf) * 4 < n:
        raise TableInconsistent("packed base field too short")
    b = np.frombuffer(bytes(buf), dtype=np.uint8)
    out = np.empty((b.size, 4), dtype=np.uint8)
    out[:, 0] = b >> 6
    out[:, 1] = (b >> 4) & 3
    out[:, 2] = (b >> 2) & 3
    out[:, 3] = b & 3
    return out.reshape(-1)[:n].copy()
