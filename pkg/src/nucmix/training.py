"""Offline training of the static models.

Both trainers use the cross-entropy objective, Adam and a fixed batch order,
so a run is a pure function of (data, config, seed).  Batch ``j`` holds the
contexts ending at positions ``t + j + r*L`` for ``r < bs``, which mirrors the
substream layout used at coding time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_int, check_scale_factor
from .alphabet import canonicalize
from .errors import CorpusEmpty, TargetTooShort
from .models import SprmModel, SpumModel, derive_sprm_init, save_spum, spum_file_bytes
from .neural import AdamHyper, AdamState, adam_step, checksum64
from .skmer import SkParams, TokenSequence, encode


@dataclass(frozen=True)
class TrainConfig:
    s: int = 3
    k: int = 3
    t: int = 32
    bs: int = 320
    epochs: int = 2
    scale_factor: int = 4
    hyper: AdamHyper = field(default_factory=AdamHyper)

    def __post_init__(self):
        SkParams(self.s, self.k)
        check_int(self.t, "t", min_val=1, max_val=65535)
        check_int(self.bs, "bs", min_val=1)
        check_int(self.epochs, "epochs", min_val=1)
        check_scale_factor(self.scale_factor)


def batch_layout(n_tokens: int, t: int, bs: int) -> tuple[int, int]:
    """(effective batch size, steps per epoch) for ``n_tokens`` training tokens."""
    n_ctx = n_tokens - t
    if n_ctx <= 0:
        return 0, 0
    b = min(bs, n_ctx)
    return b, n_ctx // b


def _ce_grad(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(targets))
    loss = float(-np.log(p[rows, targets]).sum())
    p[rows, targets] -= 1.0
    return loss, p.astype(np.float32)


def train_static(model, tokens: np.ndarray, bs: int, epochs: int, hyper: AdamHyper = AdamHyper()) -> list[float]:
    """Train ``model`` in place; returns the mean per-token loss of every epoch."""
    t = model.t
    tokens = np.asarray(tokens, dtype=np.intp)
    b, steps = batch_layout(tokens.size, t, bs)
    if steps == 0:
        raise TargetTooShort(f"need at least t+1={t + 1} tokens, got {tokens.size}")
    params = model.named_params()
    state = AdamState()
    offsets = np.arange(t)
    base = t + np.arange(b) * steps
    history = []
    for _ in range(epochs):
        total = 0.0
        for j in range(steps):
            ends = base + j
            ctx = tokens[ends[:, None] - t + offsets]
            logits, tape = model.forward(ctx)
            loss, g = _ce_grad(logits, tokens[ends])
            grads = model.backward(tape, g)
            adam_step(params, grads, state, hyper)
            model.version += 1
            total += loss
        history.append(total / (steps * b))
    return history


def tokenize_corpus(corpus, p: SkParams) -> np.ndarray:
    parts = []
    for raw in corpus:
        stream, _ = canonicalize(bytes(raw))
        parts.append(encode(stream, p).tokens)
    return np.concatenate(parts) if parts else np.zeros(0, np.uint32)


@dataclass
class SpumResult:
    model: SpumModel
    file_bytes: bytes
    file_hash: int
    losses: list[float]


def pretrain_spum(corpus, cfg: TrainConfig = TrainConfig(), seed: int = 0, out_path=None) -> SpumResult:
    """Pre-train a SPuM on the concatenated tokenized ``corpus`` (byte strings)."""
    corpus = list(corpus)
    p = SkParams(cfg.s, cfg.k)
    tokens = tokenize_corpus(corpus, p)
    if not corpus or tokens.size <= cfg.t:
        raise CorpusEmpty(f"corpus yields {tokens.size} tokens; at least t+1={cfg.t + 1} needed")
    model = SpumModel.scaled(cfg.k, cfg.t, cfg.scale_factor).init(seed)
    losses = train_static(model, tokens, cfg.bs, cfg.epochs, cfg.hyper)
    data = spum_file_bytes(model, cfg.s)
    if out_path is not None:
        Path(out_path).write_bytes(data)
    return SpumResult(model, data, checksum64(data), losses)


def pretrain_sprm(
    target: TokenSequence | np.ndarray,
    spum: SpumModel | None = None,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> SprmModel:
    """Single pass of CE training over the target's own contexts."""
    tokens = target.tokens if isinstance(target, TokenSequence) else np.asarray(target)
    if tokens.size < cfg.t + 1:
        raise TargetTooShort(f"need at least t+1={cfg.t + 1} tokens, got {tokens.size}")
    if spum is not None:
        model = derive_sprm_init(spum, seed)
    else:
        model = SprmModel.scaled(cfg.k, cfg.t, cfg.scale_factor).init(seed)
    train_static(model, tokens, cfg.bs, 1, cfg.hyper)
    return model


__all__ = [
    "TrainConfig",
    "SpumResult",
    "batch_layout",
    "train_static",
    "tokenize_corpus",
    "pretrain_spum",
    "pretrain_sprm",
    "save_spum",
]
