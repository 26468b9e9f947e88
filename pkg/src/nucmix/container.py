"""Compressed file format, version 1, little-endian throughout.

Header (53 bytes)::

    magic "PMKL" | version u8 | flags u8 | s u8 | k u8 | t u16 | bs u32
    smp_fraction u16 (per ten thousand) | scale_factor u8
    dm_seed u64 | sprm_seed u64 | spum_hash u64 | original_len u64 | chunk_count u32

Then ``chunk_count`` table entries of
``token_start u64, token_len u64, payload_offset u64, payload_len u64, trailer_len u32``
(offsets relative to the start of the payload section), the SPrM weights as
``u64 length + bytes`` when flag bit1 is set, the exception channel, the
residual bases as ``u64 count + 2-bit packed``, the chunk payloads back to back
(codestream then raw-token trailer) and finally a u64 checksum over every
preceding byte.

Flags: bit0 SPuM, bit1 SPrM, bit2 DM (always set), bit3 model passing disabled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .alphabet import ExceptionChannel, pack_bases, unpack_bases
from .errors import BadMagic, ChecksumMismatch, TableInconsistent, UnsupportedVersion
from .neural import checksum64

MAGIC = b"PMKL"
VERSION = 1
FLAG_SPUM, FLAG_SPRM, FLAG_DM, FLAG_NO_SMP = 1, 2, 4, 8
_KNOWN_FLAGS = FLAG_SPUM | FLAG_SPRM | FLAG_DM | FLAG_NO_SMP

_HEADER = struct.Struct("<4sBBBBHIHBQQQQI")
_ENTRY = struct.Struct("<QQQQI")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class ChunkEntry:
    token_start: int
    token_len: int
    payload_offset: int = 0
    payload_len: int = 0
    trailer_len: int = 0


@dataclass
class ContainerParts:
    flags: int = FLAG_DM
    s: int = 3
    k: int = 3
    t: int = 32
    bs: int = 320
    smp_q: int = 500  # smp_fraction in units of 1/10000
    scale_factor: int = 4
    dm_seed: int = 42
    sprm_seed: int = 0
    spum_hash: int = 0
    original_len: int = 0
    chunks: list[ChunkEntry] = field(default_factory=list)
    payloads: list[bytes] = field(default_factory=list)
    sprm_blob: bytes | None = None
    exceptions: ExceptionChannel = field(default_factory=ExceptionChannel)
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    version: int = VERSION

    @property
    def smp_fraction(self) -> float:
        return self.smp_q / 10000

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ContainerParts):
            return NotImplemented
        scalars = (
            "flags s k t bs smp_q scale_factor dm_seed sprm_seed spum_hash "
            "original_len payloads sprm_blob exceptions version"
        ).split()

        def table(c):  # offsets and lengths derive from the payloads
            return [(e.token_start, e.token_len, e.trailer_len) for e in c.chunks]

        return (
            all(getattr(self, a) == getattr(other, a) for a in scalars)
            and table(self) == table(other)
            and np.array_equal(self.residual, other.residual)
        )


def _layout(parts: ContainerParts) -> list[ChunkEntry]:
    """Chunk entries with offsets and lengths recomputed from the payloads."""
    if len(parts.chunks) != len(parts.payloads):
        raise TableInconsistent("one payload per chunk entry is required")
    out, off = [], 0
    for e, p in zip(parts.chunks, parts.payloads):
        if e.trailer_len > len(p):
            raise TableInconsistent("trailer longer than its payload")
        out.append(ChunkEntry(e.token_start, e.token_len, off, len(p), e.trailer_len))
        off += len(p)
    return out


def write(parts: ContainerParts) -> bytes:
    has_sprm = bool(parts.flags & FLAG_SPRM)
    if has_sprm != (parts.sprm_blob is not None):
        raise TableInconsistent("SPrM flag and embedded SPrM disagree")
    if not parts.flags & FLAG_DM:
        raise TableInconsistent("DM flag must be set")
    entries = _layout(parts)
    out = bytearray(
        _HEADER.pack(
            MAGIC,
            parts.version,
            parts.flags,
            parts.s,
            parts.k,
            parts.t,
            parts.bs,
            parts.smp_q,
            parts.scale_factor,
            parts.dm_seed,
            parts.sprm_seed,
            parts.spum_hash,
            parts.original_len,
            len(entries),
        )
    )
    for e in entries:
        out += _ENTRY.pack(e.token_start, e.token_len, e.payload_offset, e.payload_len, e.trailer_len)
    if has_sprm:
        out += struct.pack("<Q", len(parts.sprm_blob)) + parts.sprm_blob
    out += parts.exceptions.to_bytes()
    res = np.asarray(parts.residual, np.uint8)
    out += struct.pack("<Q", res.size) + pack_bases(res)
    for p in parts.payloads:
        out += p
    out += struct.pack("<Q", checksum64(bytes(out)))
    return bytes(out)


def read(data: bytes) -> ContainerParts:
    data = bytes(data)
    if len(data) < 5 or data[:4] != MAGIC:
        raise BadMagic("not a compressed container (bad magic)")
    if data[4] != VERSION:
        raise UnsupportedVersion(f"container version {data[4]} is not supported (expected {VERSION})")
    if len(data) < HEADER_SIZE + 8:
        raise TableInconsistent("container truncated inside the header")
    body = data[:-8]
    (stored,) = struct.unpack("<Q", data[-8:])
    if checksum64(body) != stored:
        raise ChecksumMismatch("container checksum mismatch")
    try:
        return _parse(body)
    except struct.error as exc:
        raise TableInconsistent(f"container truncated: {exc}") from None


def _parse(body: bytes) -> ContainerParts:
    (_, version, flags, s, k, t, bs, smp_q, scale, dm_seed, sprm_seed, spum_hash, orig, n) = _HEADER.unpack_from(
        body, 0
    )
    if flags & ~_KNOWN_FLAGS or not flags & FLAG_DM:
        raise TableInconsistent(f"invalid flags byte {flags:#04x}")
    pos = HEADER_SIZE
    if pos + n * _ENTRY.size > len(body):
        raise TableInconsistent("chunk table overruns the file")
    chunks = []
    for _ in range(n):
        chunks.append(ChunkEntry(*_ENTRY.unpack_from(body, pos)))
        pos += _ENTRY.size
    sprm_blob = None
    if flags & FLAG_SPRM:
        (ln,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + ln > len(body):
            raise TableInconsistent("embedded SPrM overruns the file")
        sprm_blob = body[pos : pos + ln]
        pos += ln
    exceptions, pos = ExceptionChannel.from_bytes(body, pos)
    (n_res,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    n_packed = (n_res + 3) // 4
    if pos + n_packed > len(body):
        raise TableInconsistent("residual field overruns the file")
    residual = unpack_bases(body[pos : pos + n_packed], n_res)
    pos += n_packed
    payload_section = body[pos:]
    payloads = []
    expect_off, expect_tok = 0, 0
    for e in chunks:
        if e.payload_offset != expect_off or e.token_start != expect_tok:
            raise TableInconsistent("chunk table is not contiguous")
        if e.trailer_len > e.payload_len or e.token_len == 0:
            raise TableInconsistent("chunk entry is malformed")
        payloads.append(payload_section[e.payload_offset : e.payload_offset + e.payload_len])
        expect_off += e.payload_len
        expect_tok += e.token_len
    if expect_off != len(payload_section):
        raise TableInconsistent("payload section length disagrees with the chunk table")
    return ContainerParts(
        flags=flags,
        s=s,
        k=k,
        t=t,
        bs=bs,
        smp_q=smp_q,
        scale_factor=scale,
        dm_seed=dm_seed,
        sprm_seed=sprm_seed,
        spum_hash=spum_hash,
        original_len=orig,
        chunks=chunks,
        payloads=payloads,
        sprm_blob=sprm_blob,
        exceptions=exceptions,
        residual=residual,
        version=version,
    )
