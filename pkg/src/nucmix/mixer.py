"""Model selection, logit mixing and the online update of DM and alpha.

The mixed distribution is

    P = softmax(alpha * (S0 * Lu + S1 * Lr) + (1 - alpha) * S2 * Lm)

with ``alpha = logistic(alpha_raw)``.  Disabled models are never run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int
from .errors import BatchMismatch, ConfigInvalid, MissingLogits, ShapeMismatch, StaleTape
from .models import DynamicModel, ModelBundle
from .neural import AdamHyper, AdamState, Tape, adam_step, checksum64, deserialize_params, serialize_params


@dataclass(frozen=True)
class SelectorFlags:
    s0: int = 0  # SPuM
    s1: int = 0  # SPrM
    s2: int = 1  # DM, always on

    def __post_init__(self):
        for name in ("s0", "s1", "s2"):
            if getattr(self, name) not in (0, 1):
                raise ConfigInvalid(f"selector flag {name} must be 0 or 1")
        if self.s2 != 1:
            raise ConfigInvalid("the dynamic model cannot be disabled")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.s0, self.s1, self.s2)

    def to_bits(self) -> int:
        return self.s0 | (self.s1 << 1) | (self.s2 << 2)

    @classmethod
    def from_bits(cls, bits: int) -> "SelectorFlags":
        return cls(bits & 1, (bits >> 1) & 1, (bits >> 2) & 1)


def select_models(input_size_bytes: int, threshold_bytes: int) -> SelectorFlags:
    """SPuM+DM for inputs up to the threshold (inclusive), SPrM+DM above it."""
    check_int(input_size_bytes, "input_size_bytes", min_val=0)
    check_int(threshold_bytes, "threshold_bytes", min_val=1)
    if input_size_bytes <= threshold_bytes:
        return SelectorFlags(1, 0, 1)
    return SelectorFlags(0, 1, 1)


@dataclass
class MixedDistribution:
    probs: np.ndarray  # (B, V) float64, rows sum to 1
    z_static: np.ndarray | None = None
    lm: np.ndarray | None = None
    tape: Tape | None = None

    def __len__(self) -> int:
        return self.probs.shape[0]


def _softmax64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_logits(name, x, width):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or (width is not None and x.shape[1] != width):
        raise ShapeMismatch(f"{name} logits have shape {x.shape}")
    return x


def mix(flags: SelectorFlags, alpha: float, lu=None, lr=None, lm=None) -> MixedDistribution:
    """Fuse the enabled models' logits; accepts single rows or (B, V) batches."""
    if not 0.0 < float(alpha) < 1.0:
        raise ConfigInvalid("alpha must lie in (0, 1)")
    if lm is None:
        raise MissingLogits("DM logits are required")
    lm = _check_logits("DM", lm, None)
    width = lm.shape[1]
    a = np.float32(alpha)
    static = None
    for flag, name, logits in ((flags.s0, "SPuM", lu), (flags.s1, "SPrM", lr)):
        if not flag:
            continue
        if logits is None:
            raise MissingLogits(f"{name} is enabled but its logits are missing")
        logits = _check_logits(name, logits, width)
        if logits.shape[0] != lm.shape[0]:
            raise BatchMismatch(f"{name} batch {logits.shape[0]} vs DM batch {lm.shape[0]}")
        static = logits.copy() if static is None else static + logits
    z = (np.float32(1) - a) * lm
    if static is not None:
        z = a * static + z
    return MixedDistribution(_softmax64(z), static, lm)


class OnlineMixer:
    """One worker's predictor stack: frozen static models plus the trainable DM
    and ``alpha_raw``, updated once per batch step with Adam."""

    def __init__(self, bundle: ModelBundle, flags: SelectorFlags, hyper: AdamHyper = AdamHyper()):
        if flags.s0 and bundle.spum is None:
            raise MissingLogits("SPuM is selected but not loaded")
        if flags.s1 and bundle.sprm is None:
            raise MissingLogits("SPrM is selected but not loaded")
        self.bundle = bundle
        self.flags = flags
        self.hyper = hyper
        self.state = AdamState()
        self._params = self._collect()

    def _collect(self) -> dict[str, np.ndarray]:
        params = {f"dm.{n}": p for n, p in self.bundle.dm.named_params().items()}
        params["alpha_raw"] = self.bundle.alpha_raw
        return params

    @property
    def alpha(self) -> float:
        return self.bundle.alpha

    def predict(self, ctx) -> MixedDistribution:
        b = self.bundle
        lu = b.spum.predict(ctx) if self.flags.s0 else None
        lr = b.sprm.predict(ctx) if self.flags.s1 else None
        lm, tape = b.dm.forward(ctx)
        dist = mix(self.flags, self.alpha, lu, lr, lm)
        dist.tape = tape
        return dist

    def controller_step(self, targets, dist: MixedDistribution) -> float:
        """Cross-entropy (nats, summed over the batch) of ``dist`` at ``targets``;
        applies one Adam step to DM and alpha_raw and returns the loss."""
        targets = np.asarray(targets, dtype=np.intp).reshape(-1)
        n = len(dist)
        if targets.shape[0] != n:
            raise BatchMismatch(f"{targets.shape[0]} targets for a batch of {n}")
        if dist.tape is None:
            raise StaleTape("distribution was not produced by this mixer")
        rows = np.arange(n)
        p = dist.probs
        loss = float(-np.log(p[rows, targets]).sum())
        g = p.copy()
        g[rows, targets] -= 1.0
        alpha = self.alpha
        g_lm = (g * (1.0 - alpha)).astype(np.float32)
        grads = {f"dm.{k}": v for k, v in self.bundle.dm.backward(dist.tape, g_lm).items()}
        static = dist.z_static if dist.z_static is not None else 0.0
        d_alpha = float((g * (np.asarray(static, np.float64) - dist.lm)).sum()) * alpha * (1.0 - alpha)
        grads["alpha_raw"] = np.array([d_alpha], dtype=np.float32)
        adam_step(self._params, grads, self.state, self.hyper)
        self.bundle.dm.version += 1
        return loss

    # step-wise model passing ----------------------------------------------
    def snapshot(self) -> bytes:
        """DM weights, Adam moments and alpha_raw as one byte string."""
        out = dict(self._params)
        for name in self._params:
            if name in self.state.m:
                out[f"adam.m.{name}"] = self.state.m[name]
                out[f"adam.v.{name}"] = self.state.v[name]
        return serialize_params(out, {"kind": "smp", "step": self.state.step})

    def restore(self, blob: bytes) -> None:
        params, meta = deserialize_params(blob)
        if meta.get("kind") != "smp":
            raise ShapeMismatch("not a model-passing snapshot")
        for name, p in self._params.items():
            if name not in params or params[name].shape != p.shape:
                raise ShapeMismatch(f"snapshot lacks a matching {name!r}")
            p[...] = params[name]
        self.state = AdamState(step=int(meta["step"]))
        for name in self._params:
            if f"adam.m.{name}" in params:
                self.state.m[name] = params[f"adam.m.{name}"].copy()
                self.state.v[name] = params[f"adam.v.{name}"].copy()
        self.bundle.dm.version += 1


def snapshot_hash(blob: bytes) -> int:
    return checksum64(blob)


def model_hash(model) -> int:
    return model.param_hash()


__all__ = [
    "SelectorFlags",
    "MixedDistribution",
    "OnlineMixer",
    "select_models",
    "mix",
    "snapshot_hash",
    "model_hash",
]
