"""scikit-learn style wrappers around the codec and the SPuM trainer."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ArchitectureMismatch, ConfigInvalid
from .mixer import SelectorFlags
from .models import load_spum
from .neural import softmax
from .pipeline import CompressConfig, compress, decompress
from .training import TrainConfig, pretrain_spum


def check_bytes(X, name: str = "X") -> bytes:
    if isinstance(X, (bytes, bytearray, memoryview)):
        return bytes(X)
    if isinstance(X, np.ndarray) and X.dtype == np.uint8:
        return X.tobytes()
    raise ConfigInvalid(f"{name} must be bytes or a uint8 array, got {type(X).__name__}")


def _as_list(X):
    """(items, was_single) for a byte string or a sequence of them."""
    if isinstance(X, (bytes, bytearray, memoryview)) or (isinstance(X, np.ndarray) and X.ndim == 1):
        return [check_bytes(X)], True
    return [check_bytes(x) for x in X], False


class NucleotideCompressor(TransformerMixin, BaseEstimator):
    """Lossless compressor; ``transform`` yields container bytes and
    ``inverse_transform`` restores the input.

    ``fit`` validates the configuration and, when ``spum_path`` is set,
    checks that the SPuM file matches ``k`` and ``t``.  It does not learn
    anything from ``X``: every model is trained per input inside ``transform``.
    """

    def __init__(self, s=3, k=3, t=32, bs=320, workers=1, selector_threshold=500_000_000,
                 smp_fraction=0.05, seed=42, scale_factor=4, spum_path=None, smp=True, flags=None):
        self.s = s
        self.k = k
        self.t = t
        self.bs = bs
        self.workers = workers
        self.selector_threshold = selector_threshold
        self.smp_fraction = smp_fraction
        self.seed = seed
        self.scale_factor = scale_factor
        self.spum_path = spum_path
        self.smp = smp
        self.flags = flags

    def fit(self, X=None, y=None):
        flags = self.flags
        if flags is not None and not isinstance(flags, SelectorFlags):
            flags = SelectorFlags(*flags)
        self.config_ = CompressConfig(
            s=self.s, k=self.k, t=self.t, bs=self.bs, workers=self.workers,
            selector_threshold=self.selector_threshold, smp_fraction=self.smp_fraction,
            seed=self.seed, scale_factor=self.scale_factor, smp=self.smp, flags=flags,
        )
        self.spum_hash_ = 0
        if self.spum_path is not None:
            model, self.spum_hash_ = load_spum(self.spum_path)
            if model.k != self.k or model.t != self.t:
                raise ArchitectureMismatch(f"SPuM is for k={model.k}, t={model.t}")
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        items, single = _as_list(X)
        out = [compress(x, self.config_, self.spum_path) for x in items]
        return out[0] if single else out

    def inverse_transform(self, X):
        check_is_fitted(self, "config_")
        items, single = _as_list(X)
        out = [decompress(x, self.spum_path, self.workers) for x in items]
        return out[0] if single else out


class SpumPretrainer(BaseEstimator):
    """Pre-trains a SPuM on a list of byte strings (``fit``) and predicts the
    next token for (n, t) contexts."""

    def __init__(self, s=3, k=3, t=32, bs=320, epochs=2, scale_factor=4, seed=0):
        self.s = s
        self.k = k
        self.t = t
        self.bs = bs
        self.epochs = epochs
        self.scale_factor = scale_factor
        self.seed = seed

    def fit(self, X, y=None):
        corpus, _ = _as_list(X)
        cfg = TrainConfig(s=self.s, k=self.k, t=self.t, bs=self.bs, epochs=self.epochs,
                          scale_factor=self.scale_factor)
        res = pretrain_spum(corpus, cfg, seed=self.seed)
        self.model_ = res.model
        self.file_bytes_ = res.file_bytes
        self.file_hash_ = res.file_hash
        self.loss_curve_ = res.losses
        return self

    def save(self, path) -> int:
        check_is_fitted(self, "model_")
        Path(path).write_bytes(self.file_bytes_)
        return self.file_hash_

    def predict_proba(self, contexts) -> np.ndarray:
        check_is_fitted(self, "model_")
        return softmax(self.model_.predict(contexts).astype(np.float64))

    def predict(self, contexts) -> np.ndarray:
        return self.predict_proba(contexts).argmax(axis=1)
