"""(s,k)-mer tokenization.

A window of ``k`` bases is taken every ``s`` bases and read as a base-4
number, most significant digit first, so ``CGG`` -> 1*16 + 2*4 + 2 = 26.
Bases after the last full window are kept as a raw residual.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_int, check_sk
from .alphabet import NucleotideStream
from .errors import NotOverlapping, TokenOutOfRange


@dataclass(frozen=True)
class SkParams:
    s: int = 3
    k: int = 3

    def __post_init__(self):
        check_sk(self.s, self.k)

    @property
    def vocab(self) -> int:
        return 4**self.k


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # uint32
    residual: np.ndarray  # uint8 base codes
    params: SkParams

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.residual, other.residual)
        )


def token_count(n: int, p: SkParams) -> int:
    return (n - p.k) // p.s + 1 if n >= p.k else 0


def _encode_range(payload: np.ndarray, p: SkParams, out: np.ndarray, lo: int, hi: int) -> None:
    starts = np.arange(lo, hi, dtype=np.int64) * p.s
    acc = np.zeros(hi - lo, dtype=np.uint32)
    for i in range(p.k):
        acc <<= 2
        acc |= payload[starts + i]
    out[lo:hi] = acc


def encode(stream: NucleotideStream, p: SkParams, workers: int = 1) -> TokenSequence:
    """Tokenize ``stream``.

    With ``workers > 1`` the token index range is split evenly and each
    slice is filled by its own thread; the result does not depend on the
    split because every token reads only its own window.
    """
    workers = check_int(workers, "workers", min_val=1)
    payload = np.asarray(stream.payload, dtype=np.uint8)
    n = payload.size
    m = token_count(n, p)
    tokens = np.empty(m, dtype=np.uint32)
    if m:
        bounds = np.linspace(0, m, min(workers, m) + 1).astype(np.int64)
        spans = list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))
        if len(spans) == 1:
            _encode_range(payload, p, tokens, 0, m)
        else:
            with ThreadPoolExecutor(max_workers=len(spans)) as pool:
                list(pool.map(lambda span: _encode_range(payload, p, tokens, *span), spans))
    covered = (m - 1) * p.s + p.k if m else 0
    return TokenSequence(tokens, payload[covered:].copy(), p)


def token_digits(tokens: np.ndarray, k: int) -> np.ndarray:
    """Base-4 digits of each token, shape (m, k), most significant first."""
    tokens = np.asarray(tokens, dtype=np.uint32)
    shifts = np.arange(2 * (k - 1), -1, -2, dtype=np.uint32)
    return ((tokens[:, None] >> shifts) & 3).astype(np.uint8)


def digits_to_tokens(digits: np.ndarray) -> np.ndarray:
    acc = np.zeros(digits.shape[0], dtype=np.uint32)
    for i in range(digits.shape[1]):
        acc <<= 2
        acc |= digits[:, i]
    return acc


def decode(ts: TokenSequence) -> NucleotideStream:
    p = ts.params
    tokens = np.asarray(ts.tokens)
    residual = np.asarray(ts.residual, dtype=np.uint8)
    if tokens.size == 0:
        return NucleotideStream(residual.copy())
    if int(tokens.max()) >= p.vocab:
        raise TokenOutOfRange(f"token {int(tokens.max())} >= 4^{p.k}")
    digits = token_digits(tokens, p.k)
    if p.s == p.k:
        body = digits.reshape(-1)
    else:
        body = np.concatenate([digits[:-1, : p.s].reshape(-1), digits[-1]])
    return NucleotideStream(np.concatenate([body, residual]))


@dataclass(frozen=True)
class OverlapReport:
    consistent: bool
    first_bad_pair: tuple[int, int] | None = None


def overlap_check(ts: TokenSequence) -> OverlapReport:
    """Check that consecutive overlapping windows agree on their shared bases."""
    p = ts.params
    if p.s == p.k:
        raise NotOverlapping("windows do not overlap when s == k")
    tokens = np.asarray(ts.tokens)
    if tokens.size < 2:
        return OverlapReport(True)
    d = token_digits(tokens, p.k)
    bad = np.any(d[:-1, p.s :] != d[1:, : p.k - p.s], axis=1)
    if not bad.any():
        return OverlapReport(True)
    j = int(np.argmax(bad))
    return OverlapReport(False, (j, j + 1))


class SkMerEncoder(TransformerMixin, BaseEstimator):
    """Transformer view of the tokenizer.

    ``transform`` maps a :class:`NucleotideStream` (or an ACGT string) to a
    :class:`TokenSequence`; ``inverse_transform`` undoes it.  The encoder is
    stateless, ``fit`` only validates parameters.

    Parameters
    ----------
    s : int, default=3
        Step between window starts.
    k : int, default=3
        Window size in bases.
    n_jobs : int, default=1
        Threads used by ``transform``.
    """

    def __init__(self, s: int = 3, k: int = 3, n_jobs: int = 1):
        self.s = s
        self.k = k
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        self.params_ = SkParams(*check_sk(self.s, self.k))
        check_int(self.n_jobs, "n_jobs", min_val=1)
        return self

    def _params(self) -> SkParams:
        if not hasattr(self, "params_"):
            self.fit()
        return self.params_

    def transform(self, X) -> TokenSequence:
        if not isinstance(X, NucleotideStream):
            X = NucleotideStream.from_text(X)
        return encode(X, self._params(), self.n_jobs)

    def inverse_transform(self, X: TokenSequence) -> NucleotideStream:
        return decode(X)
