"""Predictors mapping a context of ``t`` tokens to logits over ``4**k`` tokens.

* :class:`SpumModel` - corpus-pretrained, frozen, referenced by file hash.
* :class:`SprmModel` - pretrained on the input itself, frozen, shipped inside
  the container.
* :class:`DynamicModel` - attention model trained online, identically on
  both sides of the codec.

Dimensions are the full-size ones divided by ``scale_factor`` (default 4),
which keeps every ratio between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_int, check_scale_factor
from .errors import ArchitectureMismatch, ChecksumMismatch, ContextLengthMismatch, TableInconsistent
from .neural import (
    GRU,
    Attention,
    Embedding,
    FFN,
    Linear,
    PositionalEmbedding,
    Tape,
    check_tape,
    checksum64,
    deserialize_params,
    make_rng,
    serialize_params,
)
from .skmer import SkParams

# full-size dimensions, divided by scale_factor
STATIC_EMBED = 16
STATIC_HIDDEN = 128
STATIC_HEAD = 128
DYN_EMBED = 64
DYN_HIDDEN = 256
DYN_HEADS = 8
DYN_FFN = 4096


def _scaled(dim: int, factor: int) -> int:
    return max(1, dim // factor)


class _Model:
    kind = ""

    def __init__(self, k: int, t: int):
        self.k = check_int(k, "k", min_val=1, max_val=8)
        self.t = check_int(t, "t", min_val=1, max_val=65535)
        self.vocab = 4**self.k
        self.layers: dict = {}
        self.version = 0
        self.forward_calls = 0

    # parameters --------------------------------------------------------
    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": p for ln, layer in self.layers.items() for pn, p in layer.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.named_params()
        if set(own) != set(params):
            raise ArchitectureMismatch(f"{self.kind}: parameter names differ from the architecture")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise ArchitectureMismatch(f"{name}: stored {value.shape}, expected {own[name].shape}")
            ln, pn = name.split(".", 1)
            self.layers[ln].params[pn] = np.array(value, dtype=np.float32)
        self.version += 1

    def param_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(p, "<f4").tobytes() for p in self.named_params().values())

    def param_hash(self) -> int:
        return checksum64(self.param_bytes())

    def copy(self):
        clone = type(self).from_meta(self.meta())
        clone.load_params({k: v.copy() for k, v in self.named_params().items()})
        return clone

    def meta(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_meta(cls, meta: dict):
        raise NotImplementedError

    def to_bytes(self) -> bytes:
        return serialize_params(self.named_params(), self.meta())

    @classmethod
    def from_bytes(cls, buf: bytes):
        params, meta = deserialize_params(buf)
        if meta.get("kind") != cls.kind:
            raise ArchitectureMismatch(f"expected a {cls.kind} weight file, got {meta.get('kind')!r}")
        model = cls.from_meta(meta)
        model.load_params(params)
        return model

    # inference ---------------------------------------------------------
    def _check_context(self, ctx) -> np.ndarray:
        ctx = np.asarray(ctx)
        if ctx.ndim == 1:
            ctx = ctx[None, :]
        if ctx.ndim != 2 or ctx.shape[1] != self.t:
            raise ContextLengthMismatch(f"context must have length t={self.t}, got shape {ctx.shape}")
        return ctx.astype(np.intp, copy=False)

    def forward(self, ctx) -> tuple[np.ndarray, Tape]:
        raise NotImplementedError

    def backward(self, tape: Tape, g_logits: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def predict(self, ctx) -> np.ndarray:
        """Logits of shape (B, 4**k) for a (B, t) or (t,) context."""
        logits, _ = self.forward(ctx)
        return logits


class _BiGRUPredictor(_Model):
    """Embedding -> stacked BiGRU -> [last forward state, first backward state]
    -> linear+tanh bottleneck -> dense logits."""

    n_layers = 1

    def __init__(self, k: int, t: int, embed_dim: int, hidden: int, head_dim: int, n_layers: int | None = None):
        super().__init__(k, t)
        if n_layers is not None:
            self.n_layers = n_layers
        self.embed_dim, self.hidden, self.head_dim = embed_dim, hidden, head_dim
        self.layers["embed"] = Embedding(self.vocab, embed_dim)
        d_in = embed_dim
        for i in range(self.n_layers):
            self.layers[f"gru{i}"] = GRU(d_in, hidden, bidirectional=True)
            d_in = 2 * hidden
        self.layers["head"] = Linear(2 * hidden, head_dim, "tanh")
        self.layers["out"] = Linear(head_dim, self.vocab)

    @classmethod
    def scaled(cls, k: int, t: int, scale_factor: int = 4):
        f = check_scale_factor(scale_factor)
        return cls(k, t, _scaled(STATIC_EMBED, f), _scaled(STATIC_HIDDEN, f), _scaled(STATIC_HEAD, f))

    def init(self, seed: int):
        rng = make_rng(seed)
        for layer in self.layers.values():
            layer.init(rng)
        self.version += 1
        return self

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "t": self.t,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "head_dim": self.head_dim,
            "n_layers": self.n_layers,
        }

    @classmethod
    def from_meta(cls, meta: dict):
        return cls(meta["k"], meta["t"], meta["embed_dim"], meta["hidden"], meta["head_dim"], meta["n_layers"])

    def forward(self, ctx):
        ctx = self._check_context(ctx)
        self.forward_calls += 1
        tape = Tape(self.version)
        x, c = self.layers["embed"].forward(ctx)
        tape.records.append(c)
        for i in range(self.n_layers):
            x, c = self.layers[f"gru{i}"].forward(x)
            tape.records.append(c)
        h = self.hidden
        summary = np.concatenate([x[:, -1, :h], x[:, 0, h:]], axis=-1)
        tape.records.append(x.shape)
        z, c = self.layers["head"].forward(summary)
        tape.records.append(c)
        logits, c = self.layers["out"].forward(z)
        tape.records.append(c)
        return logits, tape

    def backward(self, tape, g_logits):
        check_tape(tape, self.version)
        rec = tape.records
        grads = {}

        def put(name, g):
            for pn, v in g.items():
                grads[f"{name}.{pn}"] = v

        gz, g = self.layers["out"].backward(rec[-1], g_logits)
        put("out", g)
        gs, g = self.layers["head"].backward(rec[-2], gz)
        put("head", g)
        shape = rec[-3]
        h = self.hidden
        gx = np.zeros(shape, dtype=gs.dtype)
        gx[:, -1, :h] = gs[:, :h]
        gx[:, 0, h:] = gs[:, h:]
        for i in range(self.n_layers - 1, -1, -1):
            gx, g = self.layers[f"gru{i}"].backward(rec[1 + i], gx)
            put(f"gru{i}", g)
        _, g = self.layers["embed"].backward(rec[0], gx)
        put("embed", g)
        return grads


class SpumModel(_BiGRUPredictor):
    kind = "spum"
    n_layers = 2


class SprmModel(_BiGRUPredictor):
    kind = "sprm"
    n_layers = 1


class DynamicModel(_Model):
    """Token + learned positional embedding, one attention block and one
    feed-forward block (both residual), then a dense head to logits."""

    kind = "dm"

    def __init__(self, k: int, t: int, embed_dim: int, hidden: int, heads: int, ffn_dim: int):
        super().__init__(k, t)
        self.embed_dim, self.hidden, self.heads, self.ffn_dim = embed_dim, hidden, heads, ffn_dim
        self.layers["embed"] = Embedding(self.vocab, embed_dim)
        self.layers["pos"] = PositionalEmbedding(self.t, embed_dim)
        self.layers["attn"] = Attention(embed_dim, hidden, heads)
        self.layers["ffn"] = FFN(embed_dim, ffn_dim)
        self.layers["out"] = Linear(embed_dim, self.vocab)

    @classmethod
    def scaled(cls, k: int, t: int, scale_factor: int = 4):
        f = check_scale_factor(scale_factor)
        return cls(k, t, _scaled(DYN_EMBED, f), _scaled(DYN_HIDDEN, f), DYN_HEADS, _scaled(DYN_FFN, f))

    def init(self, seed: int):
        rng = make_rng(seed)
        for layer in self.layers.values():
            layer.init(rng)
        self.version += 1
        return self

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "t": self.t,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
        }

    @classmethod
    def from_meta(cls, meta: dict):
        return cls(meta["k"], meta["t"], meta["embed_dim"], meta["hidden"], meta["heads"], meta["ffn_dim"])

    def forward(self, ctx):
        ctx = self._check_context(ctx)
        self.forward_calls += 1
        L = self.layers
        tape = Tape(self.version)
        x, c_emb = L["embed"].forward(ctx)
        x, _ = L["pos"].forward(x)
        a, c_attn = L["attn"].forward(x)
        h = x[:, -1] + a
        f, c_ffn = L["ffn"].forward(h)
        h2 = h + f
        logits, c_out = L["out"].forward(h2)
        tape.records = [c_emb, c_attn, c_ffn, c_out]
        return logits, tape

    def backward(self, tape, g_logits):
        check_tape(tape, self.version)
        c_emb, c_attn, c_ffn, c_out = tape.records
        L = self.layers
        grads = {}

        def put(name, g):
            for pn, v in g.items():
                grads[f"{name}.{pn}"] = v

        gh2, g = L["out"].backward(c_out, g_logits)
        put("out", g)
        gf, g = L["ffn"].backward(c_ffn, gh2)
        put("ffn", g)
        gh = gh2 + gf
        gx, g = L["attn"].backward(c_attn, gh)
        put("attn", g)
        gx[:, -1] += gh
        gx, g = L["pos"].backward(None, gx)
        put("pos", g)
        _, g = L["embed"].backward(c_emb, gx)
        put("embed", g)
        return grads


# files and bundles -----------------------------------------------------------


def spum_file_bytes(model: SpumModel, s: int | None = None) -> bytes:
    meta = model.meta()
    if s is not None:
        meta["s"] = int(s)
    return serialize_params(model.named_params(), meta)


def save_spum(model: SpumModel, path, s: int | None = None) -> int:
    """Write a SPuM model file; returns its 64-bit content hash."""
    data = spum_file_bytes(model, s)
    Path(path).write_bytes(data)
    return checksum64(data)


def load_spum(path) -> tuple[SpumModel, int]:
    """Read a SPuM file; returns (model, content hash)."""
    data = Path(path).read_bytes()
    try:
        model = SpumModel.from_bytes(data)
    except TableInconsistent as exc:
        raise ChecksumMismatch(f"SPuM file is malformed: {exc}") from None
    return model, checksum64(data)


def derive_sprm_init(spum: SpumModel, seed: int) -> SprmModel:
    """SPrM sharing SPuM's embedding and first BiGRU layer; head re-drawn from ``seed``."""
    sprm = SprmModel(spum.k, spum.t, spum.embed_dim, spum.hidden, spum.head_dim)
    rng = make_rng(seed)
    sprm.layers["head"].init(rng)
    sprm.layers["out"].init(rng)
    for ln in ("embed", "gru0"):
        for pn, p in spum.layers[ln].params.items():
            sprm.layers[ln].params[pn] = p.copy()
    sprm.version += 1
    return sprm


@dataclass
class ModelBundle:
    dm: DynamicModel
    skparams: SkParams
    t: int
    spum: SpumModel | None = None
    sprm: SprmModel | None = None
    alpha_raw: np.ndarray = field(default_factory=lambda: np.zeros(1, np.float32))
    spum_hash: int = 0

    @property
    def alpha(self) -> float:
        return float(1 / (1 + np.exp(-np.float64(self.alpha_raw[0]))))


def load_bundle(
    spum_file=None,
    sprm_bytes: bytes | None = None,
    dm_seed: int = 42,
    skparams: SkParams = SkParams(),
    t: int = 32,
    scale_factor: int = 4,
) -> ModelBundle:
    spum, spum_hash = (None, 0)
    if spum_file is not None:
        spum, spum_hash = load_spum(spum_file)
        if spum.k != skparams.k or spum.t != t:
            raise ArchitectureMismatch(
                f"SPuM was built for k={spum.k}, t={spum.t}; run uses k={skparams.k}, t={t}"
            )
    sprm = None
    if sprm_bytes is not None:
        sprm = SprmModel.from_bytes(sprm_bytes)
        if sprm.k != skparams.k or sprm.t != t:
            raise ArchitectureMismatch("embedded SPrM does not match k/t of the container")
    dm = DynamicModel.scaled(skparams.k, t, scale_factor).init(dm_seed)
    return ModelBundle(dm=dm, skparams=skparams, t=t, spum=spum, sprm=sprm, spum_hash=spum_hash)
