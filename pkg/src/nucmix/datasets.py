"""Deterministic test inputs: random and periodic ACGT, and genome-like FASTA.

The genome-like generator mixes an order-5 Markov background with copied
repeats (forward and reverse-complement, with point mutations), soft-masked
lowercase stretches, runs of N, a FASTA header and fixed-width lines.  It is
a stand-in for real assemblies when none are available offline.
"""

from __future__ import annotations

import numpy as np

from .neural import make_rng

ACGT = np.frombuffer(b"ACGT", dtype=np.uint8)
_COMPLEMENT = np.array([3, 2, 1, 0], dtype=np.uint8)


def random_acgt(n: int, seed: int = 0) -> bytes:
    return ACGT[make_rng(seed).integers(0, 4, n)].tobytes()


def periodic_acgt(n: int, period: int, seed: int = 0) -> bytes:
    unit = make_rng(seed).integers(0, 4, period)
    return ACGT[np.resize(unit, n)].tobytes()


def random_bytes(n: int, seed: int = 0) -> bytes:
    return make_rng(seed).integers(0, 256, n).astype(np.uint8).tobytes()


def _markov_background(n: int, rng, order: int = 5, concentration: float = 0.3) -> np.ndarray:
    table = rng.dirichlet(np.full(4, concentration), size=4**order)
    cdf = np.cumsum(table, axis=1)
    u = rng.random(n)
    out = np.empty(n, dtype=np.uint8)
    ctx, mask = 0, 4**order - 1
    for i in range(n):
        b = int(np.searchsorted(cdf[ctx], u[i]))
        b = min(b, 3)
        out[i] = b
        ctx = ((ctx << 2) | b) & mask
    return out


def genome_like_codes(n: int, seed: int = 0) -> np.ndarray:
    """Base codes 0..3 with local statistics and long repeats."""
    rng = make_rng(seed)
    bg_len = max(1, n // 4)
    background = _markov_background(bg_len, rng)
    out = np.empty(n, dtype=np.uint8)
    pos = 0
    while pos < n:
        remaining = n - pos
        if pos > 2000 and rng.random() < 0.35:
            ln = int(min(remaining, rng.integers(200, 3000)))
            src = int(rng.integers(0, pos - ln)) if pos > ln else 0
            seg = out[src : src + ln].copy()
            if rng.random() < 0.3:
                seg = _COMPLEMENT[seg[::-1]]
            hits = rng.random(seg.size) < 0.02
            seg[hits] = rng.integers(0, 4, int(hits.sum()))
        else:
            ln = int(min(remaining, rng.integers(500, 5000)))
            start = int(rng.integers(0, max(1, bg_len - ln)))
            seg = np.resize(background[start : start + ln], ln)
        out[pos : pos + ln] = seg[:ln]
        pos += ln
    return out


def genome_like_fasta(n_bases: int, seed: int = 0, line: int = 60, name: str = "chrSynthetic") -> bytes:
    """FASTA text with ``n_bases`` sequence characters (ACGT, acgt, N)."""
    rng = make_rng(seed + 7919)
    seq = ACGT[genome_like_codes(n_bases, seed)].copy()
    for _ in range(max(1, n_bases // 50_000)):
        a = int(rng.integers(0, max(1, n_bases - 1)))
        seq[a : a + int(rng.integers(100, 2000))] += 32  # soft-masked lowercase
    for _ in range(max(1, n_bases // 200_000)):
        a = int(rng.integers(0, max(1, n_bases - 1)))
        seq[a : a + int(rng.integers(10, 500))] = ord("N")
    body = b"\n".join(seq[i : i + line].tobytes() for i in range(0, n_bases, line))
    return b">" + name.encode() + b" synthetic genome-like test sequence\n" + body + b"\n"
