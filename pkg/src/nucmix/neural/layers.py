"""Layers with explicit forward/backward passes over numpy arrays.

Every layer keeps its parameters in ``self.params`` (name -> ndarray) and
computes in the dtype of those parameters, float32 in production and float64
for finite-difference checks.  ``forward`` returns ``(output, cache)`` and
``backward(cache, grad_out)`` returns ``(grad_in, param_grads)``.

Reductions are written as whole-array numpy/BLAS calls with fixed shapes, so
the same inputs always take the same code path; compressor and decompressor
rely on this to compute identical probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ShapeMismatch, StaleTape, TokenOutOfRange

LAYER_KINDS = ("embedding", "positional", "gru", "bigru", "attention", "ffn", "linear", "softmax")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical draws for an identical seed on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _sigmoid(x):
    return 1 / (1 + np.exp(-x))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    @property
    def dtype(self):
        for p in self.params.values():
            return p.dtype
        return np.dtype(np.float32)

    def init(self, rng: np.random.Generator) -> "Layer":
        return self

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, gy):
        raise NotImplementedError


class Embedding(Layer):
    kind = "embedding"

    def __init__(self, vocab: int, dim: int):
        super().__init__()
        self.vocab, self.dim = vocab, dim
        self.params["weight"] = np.zeros((vocab, dim), np.float32)

    def init(self, rng):
        self.params["weight"] = _uniform(rng, 1.0, (self.vocab, self.dim))
        return self

    def forward(self, idx):
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab):
            raise TokenOutOfRange(f"index outside [0, {self.vocab})")
        return self.params["weight"][idx], idx

    def backward(self, idx, gy):
        flat = idx.reshape(-1)
        g2 = gy.reshape(flat.size, self.dim)
        gw = np.empty((self.vocab, self.dim), dtype=gy.dtype)
        for j in range(self.dim):
            gw[:, j] = np.bincount(flat, weights=g2[:, j], minlength=self.vocab)
        return None, {"weight": gw}


class PositionalEmbedding(Layer):
    """Learned per-position vectors added to a (B, T, E) input."""

    kind = "positional"

    def __init__(self, length: int, dim: int):
        super().__init__()
        self.length, self.dim = length, dim
        self.params["weight"] = np.zeros((length, dim), np.float32)

    def init(self, rng):
        self.params["weight"] = _uniform(rng, 1.0, (self.length, self.dim))
        return self

    def forward(self, x):
        if x.shape[-2:] != (self.length, self.dim):
            raise ShapeMismatch(f"expected (..., {self.length}, {self.dim}), got {x.shape}")
        return x + self.params["weight"], None

    def backward(self, cache, gy):
        return gy, {"weight": gy.reshape(-1, self.length, self.dim).sum(axis=0)}


class Linear(Layer):
    kind = "linear"

    def __init__(self, d_in: int, d_out: int, activation: str | None = None):
        super().__init__()
        if activation not in (None, "tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.d_in, self.d_out, self.activation = d_in, d_out, activation
        self.params["weight"] = np.zeros((d_in, d_out), np.float32)
        self.params["bias"] = np.zeros(d_out, np.float32)

    def init(self, rng):
        bound = 1 / np.sqrt(self.d_in)
        self.params["weight"] = _uniform(rng, bound, (self.d_in, self.d_out))
        self.params["bias"] = _uniform(rng, bound, (self.d_out,))
        return self

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeMismatch(f"linear expects last dim {self.d_in}, got {x.shape}")
        z = x @ self.params["weight"] + self.params["bias"]
        if self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "relu":
            y = np.maximum(z, 0)
        else:
            y = z
        return y, (x, y)

    def backward(self, cache, gy):
        x, y = cache
        if self.activation == "tanh":
            gz = gy * (1 - y * y)
        elif self.activation == "relu":
            gz = gy * (y > 0)
        else:
            gz = gy
        x2 = x.reshape(-1, self.d_in)
        g2 = gz.reshape(-1, self.d_out)
        grads = {"weight": x2.T @ g2, "bias": g2.sum(axis=0)}
        return gz @ self.params["weight"].T, grads


class FFN(Layer):
    """Two-layer feed-forward block, ReLU in between, no residual."""

    kind = "ffn"

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.dim, self.hidden = dim, hidden
        self.params = {
            "w1": np.zeros((dim, hidden), np.float32),
            "b1": np.zeros(hidden, np.float32),
            "w2": np.zeros((hidden, dim), np.float32),
            "b2": np.zeros(dim, np.float32),
        }

    def init(self, rng):
        b1, b2 = 1 / np.sqrt(self.dim), 1 / np.sqrt(self.hidden)
        self.params = {
            "w1": _uniform(rng, b1, (self.dim, self.hidden)),
            "b1": _uniform(rng, b1, (self.hidden,)),
            "w2": _uniform(rng, b2, (self.hidden, self.dim)),
            "b2": _uniform(rng, b2, (self.dim,)),
        }
        return self

    def forward(self, x):
        p = self.params
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f"ffn expects last dim {self.dim}, got {x.shape}")
        u = np.maximum(x @ p["w1"] + p["b1"], 0)
        return u @ p["w2"] + p["b2"], (x, u)

    def backward(self, cache, gy):
        x, u = cache
        p = self.params
        x2 = x.reshape(-1, self.dim)
        u2 = u.reshape(-1, self.hidden)
        g2 = gy.reshape(-1, self.dim)
        gu = (g2 @ p["w2"].T) * (u2 > 0)
        grads = {"w1": x2.T @ gu, "b1": gu.sum(axis=0), "w2": u2.T @ g2, "b2": g2.sum(axis=0)}
        return (gu @ p["w1"].T).reshape(x.shape), grads


class GRU(Layer):
    """Single GRU layer over (B, T, in); ``bidirectional`` runs a second,
    time-reversed direction and concatenates outputs to (B, T, 2*hidden).

    Gate order in the stacked weights is [reset, update, candidate]:
    ``n = tanh(x Wn + bn + r * (h Un + cn))``, ``h' = (1 - z) * n + z * h``.
    """

    def __init__(self, d_in: int, hidden: int, bidirectional: bool = False):
        super().__init__()
        self.d_in, self.hidden = d_in, hidden
        self.bidirectional = bidirectional
        self.kind = "bigru" if bidirectional else "gru"
        nd = 2 if bidirectional else 1
        self.params = {
            "wx": np.zeros((nd, d_in, 3 * hidden), np.float32),
            "wh": np.zeros((nd, hidden, 3 * hidden), np.float32),
            "bx": np.zeros((nd, 3 * hidden), np.float32),
            "bh": np.zeros((nd, 3 * hidden), np.float32),
        }

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    def init(self, rng):
        nd, h = self.directions, self.hidden
        self.params["wx"] = _uniform(rng, 1 / np.sqrt(self.d_in), (nd, self.d_in, 3 * h))
        self.params["wh"] = _uniform(rng, 1 / np.sqrt(h), (nd, h, 3 * h))
        self.params["bx"] = np.zeros((nd, 3 * h), np.float32)
        self.params["bh"] = np.zeros((nd, 3 * h), np.float32)
        return self

    def _stack(self, x):
        if self.bidirectional:
            return np.stack([x, x[:, ::-1]])
        return x[None]

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.d_in:
            raise ShapeMismatch(f"gru expects (B, T, {self.d_in}), got {x.shape}")
        p = self.params
        B, T, _ = x.shape
        h_dim = self.hidden
        X = np.ascontiguousarray(self._stack(x))  # (D, B, T, in)
        nd = X.shape[0]
        A = (X.reshape(nd, B * T, self.d_in) @ p["wx"]).reshape(nd, B, T, 3 * h_dim)
        A += p["bx"][:, None, None, :]
        h = np.zeros((nd, B, h_dim), dtype=x.dtype)
        H = np.empty((nd, B, T, h_dim), dtype=x.dtype)
        R = np.empty_like(H)
        Z = np.empty_like(H)
        N = np.empty_like(H)
        HN = np.empty_like(H)
        HP = np.empty_like(H)
        bh = p["bh"][:, None, :]
        for t in range(T):
            a = A[:, :, t]
            hh = h @ p["wh"] + bh
            r = _sigmoid(a[..., :h_dim] + hh[..., :h_dim])
            z = _sigmoid(a[..., h_dim : 2 * h_dim] + hh[..., h_dim : 2 * h_dim])
            hn = hh[..., 2 * h_dim :]
            n = np.tanh(a[..., 2 * h_dim :] + r * hn)
            HP[:, :, t] = h
            h = (1 - z) * n + z * h
            H[:, :, t] = h
            R[:, :, t], Z[:, :, t], N[:, :, t], HN[:, :, t] = r, z, n, hn
        if self.bidirectional:
            y = np.concatenate([H[0], H[1][:, ::-1]], axis=-1)
        else:
            y = H[0]
        return y, (X, HP, R, Z, N, HN)

    def backward(self, cache, gy):
        X, HP, R, Z, N, HN = cache
        p = self.params
        nd, B, T, h_dim = HP.shape
        if self.bidirectional:
            GH = np.stack([gy[..., :h_dim], gy[..., h_dim:][:, ::-1]])
        else:
            GH = gy[None]
        dA = np.empty((nd, B, T, 3 * h_dim), dtype=gy.dtype)
        gwh = np.zeros_like(p["wh"])
        gbh = np.zeros_like(p["bh"])
        whT = p["wh"].transpose(0, 2, 1)
        dh = np.zeros((nd, B, h_dim), dtype=gy.dtype)
        for t in range(T - 1, -1, -1):
            dh = dh + GH[:, :, t]
            r, z, n, hn, hp = R[:, :, t], Z[:, :, t], N[:, :, t], HN[:, :, t], HP[:, :, t]
            dn = dh * (1 - z)
            dz = dh * (hp - n)
            dhp = dh * z
            dan = dn * (1 - n * n)
            dar = dan * hn * r * (1 - r)
            daz = dz * z * (1 - z)
            dhh = np.concatenate([dar, daz, dan * r], axis=-1)
            dA[:, :, t] = np.concatenate([dar, daz, dan], axis=-1)
            gwh += hp.transpose(0, 2, 1) @ dhh
            gbh += dhh.sum(axis=1)
            dh = dhp + dhh @ whT
        dA2 = dA.reshape(nd, B * T, 3 * h_dim)
        gwx = X.reshape(nd, B * T, self.d_in).transpose(0, 2, 1) @ dA2
        gbx = dA2.sum(axis=1)
        GX = (dA2 @ p["wx"].transpose(0, 2, 1)).reshape(nd, B, T, self.d_in)
        gx = GX[0] + GX[1][:, ::-1] if self.bidirectional else GX[0]
        return gx, {"wx": gwx, "wh": gwh, "bx": gbx, "bh": gbh}


class Attention(Layer):
    """Multi-head attention of the last position over a (B, T, E) sequence.

    Only the final position issues a query, since only the next token is
    predicted.  The per-head key projection is folded into the query
    (``score_t = x_t . (Wk_h q_h)``) and values are pooled before projection
    (``Wv_h (sum_t a_t x_t)``); both are exact rewrites that skip projecting
    every position.  A key bias would add a constant per head to every score
    and cancel in the softmax, so there is none.  Output is (B, E).
    """

    kind = "attention"

    def __init__(self, dim: int, hidden: int, heads: int):
        super().__init__()
        if hidden % heads:
            raise ShapeMismatch(f"{heads} heads do not divide hidden size {hidden}")
        self.dim, self.hidden, self.heads = dim, hidden, heads
        self.head_dim = hidden // heads
        E, H = dim, hidden
        self.params = {
            "wq": np.zeros((E, H), np.float32),
            "bq": np.zeros(H, np.float32),
            "wk": np.zeros((E, H), np.float32),
            "wv": np.zeros((E, H), np.float32),
            "bv": np.zeros(H, np.float32),
            "wo": np.zeros((H, E), np.float32),
            "bo": np.zeros(E, np.float32),
        }

    def init(self, rng):
        E, H = self.dim, self.hidden
        be, bh = 1 / np.sqrt(E), 1 / np.sqrt(H)
        self.params = {
            "wq": _uniform(rng, be, (E, H)),
            "bq": _uniform(rng, be, (H,)),
            "wk": _uniform(rng, be, (E, H)),
            "wv": _uniform(rng, be, (E, H)),
            "bv": _uniform(rng, be, (H,)),
            "wo": _uniform(rng, bh, (H, E)),
            "bo": _uniform(rng, bh, (E,)),
        }
        return self

    def _heads(self, w):
        # (E, H) -> (NH, E, D)
        return np.ascontiguousarray(w.reshape(self.dim, self.heads, self.head_dim).transpose(1, 0, 2))

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeMismatch(f"attention expects (B, T, {self.dim}), got {x.shape}")
        p = self.params
        B = x.shape[0]
        NH, D = self.heads, self.head_dim
        scale = np.asarray(1 / np.sqrt(D), dtype=x.dtype)
        xl = x[:, -1]
        q = xl @ p["wq"] + p["bq"]
        qh = np.ascontiguousarray(q.reshape(B, NH, D).transpose(1, 0, 2))  # (NH, B, D)
        wk_h = self._heads(p["wk"])  # (NH, E, D)
        qk = np.ascontiguousarray((qh @ wk_h.transpose(0, 2, 1)).transpose(1, 0, 2))  # (B, NH, E)
        xT = x.transpose(0, 2, 1)
        s = (qk @ xT) * scale  # (B, NH, T)
        a = softmax(s)
        xa = np.ascontiguousarray((a @ x).transpose(1, 0, 2))  # (NH, B, E)
        wv_h = self._heads(p["wv"])
        ch = xa @ wv_h  # (NH, B, D)
        c = ch.transpose(1, 0, 2).reshape(B, self.hidden) + p["bv"]
        y = c @ p["wo"] + p["bo"]
        return y, (x, qh, wk_h, qk, a, xa, wv_h, c)

    def backward(self, cache, gy):
        x, qh, wk_h, qk, a, xa, wv_h, c = cache
        p = self.params
        B = x.shape[0]
        NH, D, E = self.heads, self.head_dim, self.dim
        scale = np.asarray(1 / np.sqrt(D), dtype=x.dtype)
        g = {"wo": c.T @ gy, "bo": gy.sum(axis=0)}
        gc = gy @ p["wo"].T  # (B, H)
        g["bv"] = gc.sum(axis=0)
        gch = np.ascontiguousarray(gc.reshape(B, NH, D).transpose(1, 0, 2))  # (NH, B, D)
        gwv_h = xa.transpose(0, 2, 1) @ gch  # (NH, E, D)
        g["wv"] = gwv_h.transpose(1, 0, 2).reshape(E, self.hidden)
        gxa = np.ascontiguousarray((gch @ wv_h.transpose(0, 2, 1)).transpose(1, 0, 2))  # (B, NH, E)
        ga = gxa @ x.transpose(0, 2, 1)  # (B, NH, T)
        gx = a.transpose(0, 2, 1) @ gxa  # (B, T, E)
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale
        gqk = gs @ x  # (B, NH, E)
        gx += gs.transpose(0, 2, 1) @ qk
        gqk_h = np.ascontiguousarray(gqk.transpose(1, 0, 2))  # (NH, B, E)
        gwk_h = gqk_h.transpose(0, 2, 1) @ qh  # (NH, E, D)
        g["wk"] = gwk_h.transpose(1, 0, 2).reshape(E, self.hidden)
        gqh = gqk_h @ wk_h  # (NH, B, D)
        gq = gqh.transpose(1, 0, 2).reshape(B, self.hidden)
        xl = x[:, -1]
        g["wq"] = xl.T @ gq
        g["bq"] = gq.sum(axis=0)
        gx[:, -1] += gq @ p["wq"].T
        return gx, g


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        y = softmax(np.array(x, copy=True))
        return y, y

    def backward(self, y, gy):
        return y * (gy - (gy * y).sum(axis=-1, keepdims=True)), {}


@dataclass(frozen=True)
class LayerSpec:
    """Architecture descriptor: ``kind`` plus kind-specific positive sizes.

    embedding/positional: (vocab_or_length, dim); linear: (in, out);
    gru/bigru: (in, hidden); attention: (dim, hidden, heads); ffn: (dim, hidden);
    softmax: ().
    """

    kind: str
    dims: tuple[int, ...] = ()
    activation: str | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeMismatch(f"unknown layer kind {self.kind!r}")
        if any(int(d) <= 0 for d in self.dims):
            raise ShapeMismatch(f"{self.kind} dims must be positive, got {self.dims}")
        if self.kind == "attention" and self.dims[1] % self.dims[2]:
            raise ShapeMismatch("attention head count must divide its hidden size")

    def build(self) -> Layer:
        d = self.dims
        if self.kind == "embedding":
            return Embedding(*d)
        if self.kind == "positional":
            return PositionalEmbedding(*d)
        if self.kind == "linear":
            return Linear(d[0], d[1], self.activation)
        if self.kind in ("gru", "bigru"):
            return GRU(d[0], d[1], bidirectional=self.kind == "bigru")
        if self.kind == "attention":
            return Attention(*d)
        if self.kind == "ffn":
            return FFN(*d)
        return Softmax()


def init_weights(specs: list[LayerSpec], rng: np.random.Generator) -> list[Layer]:
    """Build and initialize layers in order, drawing from ``rng`` sequentially."""
    return [spec.build().init(rng) for spec in specs]


@dataclass
class Tape:
    version: int
    records: list[Any] = field(default_factory=list)
    consumed: bool = False


class Sequential:
    """A plain layer stack: output of one layer feeds the next."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def from_specs(cls, specs: list[LayerSpec], rng: np.random.Generator) -> "Sequential":
        return cls(init_weights(specs, rng))

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            i, k = name.split(".", 1)
            layer = self.layers[int(i)]
            if layer.params[k].shape != value.shape:
                raise ShapeMismatch(f"{name}: {layer.params[k].shape} vs {value.shape}")
            layer.params[k] = value
        self.version += 1

    def forward(self, x) -> tuple[np.ndarray, Tape]:
        tape = Tape(self.version)
        for layer in self.layers:
            x, cache = layer.forward(x)
            tape.records.append(cache)
        return x, tape

    def backward(self, tape: Tape, gy) -> dict[str, np.ndarray]:
        check_tape(tape, self.version)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            gy, g = self.layers[i].backward(tape.records[i], gy)
            for k, v in g.items():
                grads[f"{i}.{k}"] = v
        return grads


def check_tape(tape: Tape, version: int) -> None:
    if tape.consumed:
        raise StaleTape("tape already used for a backward pass")
    if tape.version != version:
        raise StaleTape("parameters changed since this tape was recorded")
    tape.consumed = True


def cast_params(layers: list[Layer], dtype) -> None:
    for layer in layers:
        for k in list(layer.params):
            layer.params[k] = layer.params[k].astype(dtype)
