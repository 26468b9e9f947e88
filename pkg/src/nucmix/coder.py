"""Range coder over 16-bit quantized distributions.

The coder keeps a 32-bit ``range`` renormalized byte-wise whenever it drops
below 2**24, and a ``low`` register one carry bit wider than 32 bits; pending
``0xFF`` bytes are held back until a carry either resolves or rules them out.
Sub-intervals are computed as ``(range * cum) >> 16`` rather than
``(range >> 16) * cum`` so that truncation costs at most one unit of range per
symbol instead of up to 2**16.

All constants here are frozen by the container version byte.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDistribution, StreamExhausted

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_MASK24 = 0x00FFFFFF


@dataclass(frozen=True)
class QuantizedDistribution:
    freqs: np.ndarray  # int64, sums to TOTAL, every entry >= 1

    @property
    def total(self) -> int:
        return TOTAL

    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.freqs)])


def _distribute_surplus(freqs: np.ndarray, rem: np.ndarray, surplus: np.ndarray) -> None:
    """Remove ``surplus[b]`` units from row ``b`` in place.

    Units go one at a time to the entry whose current remainder
    ``p*TOTAL - freq`` is smallest (ties: lower index), never taking an entry
    below 1.  Taking a unit from an entry raises its remainder by exactly 1,
    so the order is "all eligible entries by remainder, then again", with
    entry ``i`` dropping out after ``freqs[i] - 1`` units.  That is solved
    here as a water level: whole rounds first, then one partial round.
    """
    rows = np.flatnonzero(surplus > 0)
    if rows.size == 0:
        return
    f = freqs[rows]
    r = rem[rows]
    u = surplus[rows]
    cap = f - 1
    # largest level L with sum(min(cap, L)) <= u, by bisection on L
    lo = np.zeros(rows.size, dtype=np.int64)
    hi = cap.max(axis=1) + 1
    while np.any(hi - lo > 1):
        mid = (lo + hi) // 2
        ok = np.minimum(cap, mid[:, None]).sum(axis=1) <= u
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    take = np.minimum(cap, lo[:, None])
    left = u - take.sum(axis=1)
    # partial round: entries that still have capacity, smallest remainder first
    eligible = cap > lo[:, None]
    key = np.where(eligible, r, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(order.shape[1])[None, :], axis=1)
    take += (rank < left[:, None]) & eligible
    freqs[rows] = f - take


def quantize_batch(probs: np.ndarray) -> np.ndarray:
    """Quantize each row of ``probs`` to integer frequencies summing to 2**16.

    ``freq = max(1, floor(p * 2**16))``; a deficit goes to the largest
    remainders, a surplus (only possible through the clamp) comes out of the
    smallest remainders, ties broken by ascending symbol index.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise InvalidDistribution("expected a 2-d batch of distributions")
    width = p.shape[1]
    if width > TOTAL:
        raise InvalidDistribution(f"{width} symbols cannot all get frequency >= 1 out of {TOTAL}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistribution("probabilities must be finite and non-negative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        raise InvalidDistribution("probabilities must sum to 1 within 1e-5")
    scaled = p * TOTAL
    base = np.floor(scaled)
    rem = scaled - base
    freqs = np.maximum(base.astype(np.int64), 1)
    diff = TOTAL - freqs.sum(axis=1)
    need = diff > 0
    if need.any():
        # deficit < width always; one unit each to the top remainders
        order = np.argsort(-rem[need], axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(width)[None, :], axis=1)
        freqs[need] += rank < diff[need][:, None]
    if np.any(diff < 0):
        _distribute_surplus(freqs, rem, -diff)
    return freqs


def quantize(p) -> QuantizedDistribution:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidDistribution("expected a 1-d distribution")
    return QuantizedDistribution(quantize_batch(p[None, :])[0])


def uniform_dist(width: int) -> QuantizedDistribution:
    """Near-equal frequencies; the ``TOTAL % width`` leftover units go to the lowest symbols."""
    if not 1 <= width <= TOTAL:
        raise InvalidDistribution(f"width {width} outside [1, {TOTAL}]")
    freqs = np.full(width, TOTAL // width, dtype=np.int64)
    freqs[: TOTAL % width] += 1
    return QuantizedDistribution(freqs)


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self._cache = 0
        self._pending = 1
        self._out = bytearray()
        self._done = False

    def _shift_low(self) -> None:
        low = self.low
        if (low & _MASK32) < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            out = self._out
            out.append((self._cache + carry) & 0xFF)
            if self._pending > 1:
                out.extend(bytes([(0xFF + carry) & 0xFF]) * (self._pending - 1))
            self._pending = 0
            self._cache = (low >> 24) & 0xFF
        self._pending += 1
        self.low = (low & _MASK24) << 8

    def encode(self, cum: int, freq: int) -> None:
        """Narrow to the sub-interval [cum, cum+freq) out of TOTAL."""
        r = self.range
        lo = (r * cum) >> PRECISION
        r = ((r * (cum + freq)) >> PRECISION) - lo
        self.low += lo
        while r < _TOP:
            r <<= 8
            self._shift_low()
        self.range = r

    def encode_symbol(self, dist: QuantizedDistribution, sym: int) -> None:
        f = dist.freqs
        if not 0 <= sym < f.size:
            raise InvalidDistribution(f"symbol {sym} outside alphabet of {f.size}")
        self.encode(int(f[:sym].sum()), int(f[sym]))

    def encode_many(self, cums, freqs) -> None:
        """Encode a run of (cum, freq) pairs; same result as repeated :meth:`encode`."""
        r = self.range
        low = self.low
        shift = self._shift_low
        for cum, freq in zip(cums, freqs):
            lo = (r * cum) >> PRECISION
            r = ((r * (cum + freq)) >> PRECISION) - lo
            low += lo
            while r < _TOP:
                r <<= 8
                self.low = low
                shift()
                low = self.low
        self.low = low
        self.range = r

    def finish(self) -> bytes:
        if not self._done:
            for _ in range(5):
                self._shift_low()
            self._done = True
        # the very first byte is the initial empty cache and always zero
        return bytes(self._out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        if len(self.data) < 4:
            raise StreamExhausted("codestream shorter than the 4-byte preamble")
        self.code = int.from_bytes(self.data[:4], "big")
        self.range = _MASK32
        self.pos = 4

    def decode(self, cum: list[int]) -> int:
        """Decode one symbol given the cumulative table ``cum`` (length width+1)."""
        r = self.range
        code = self.code
        v = (((code + 1) << PRECISION) - 1) // r
        sym = bisect_right(cum, v) - 1
        lo = (r * cum[sym]) >> PRECISION
        r = ((r * cum[sym + 1]) >> PRECISION) - lo
        code -= lo
        if r <= 0 or code < 0 or code >= r:
            raise StreamExhausted("codestream is inconsistent with the distribution")
        while r < _TOP:
            if self.pos >= len(self.data):
                raise StreamExhausted("read past the end of the codestream")
            code = (code << 8) | self.data[self.pos]
            self.pos += 1
            r <<= 8
        self.code = code
        self.range = r
        return sym

    def decode_symbol(self, dist: QuantizedDistribution) -> int:
        return self.decode(dist.cumulative().tolist())

    def decode_many(self, cum_rows: list[list[int]]) -> list[int]:
        return [self.decode(row) for row in cum_rows]


def encode_symbols(dists, symbols) -> bytes:
    enc = RangeEncoder()
    for d, s in zip(dists, symbols):
        enc.encode_symbol(d, int(s))
    return enc.finish()


def decode_symbols(data: bytes, dists) -> list[int]:
    dec = RangeDecoder(data)
    return [dec.decode_symbol(d) for d in dists]


def ideal_codelength_bits(freqs: np.ndarray, symbols: np.ndarray) -> float:
    """Sum of -log2(freq[sym] / TOTAL) over a sequence, rows aligned with symbols."""
    freqs = np.asarray(freqs)
    picked = freqs[np.arange(len(symbols)), np.asarray(symbols)]
    return float(-np.log2(picked / TOTAL).sum())
