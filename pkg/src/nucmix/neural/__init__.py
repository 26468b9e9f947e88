"""Deterministic numpy neural-network substrate (layers, gradients, Adam)."""

from .layers import (
    FFN,
    GRU,
    LAYER_KINDS,
    Attention,
    Embedding,
    Layer,
    LayerSpec,
    Linear,
    PositionalEmbedding,
    Sequential,
    Softmax,
    Tape,
    cast_params,
    check_tape,
    init_weights,
    make_rng,
    softmax,
)
from .optim import AdamHyper, AdamState, adam_step
from .serialize import checksum64, deserialize_params, serialize_params

__all__ = [
    "FFN",
    "GRU",
    "LAYER_KINDS",
    "Attention",
    "Embedding",
    "Layer",
    "LayerSpec",
    "Linear",
    "PositionalEmbedding",
    "Sequential",
    "Softmax",
    "Tape",
    "cast_params",
    "check_tape",
    "init_weights",
    "make_rng",
    "softmax",
    "AdamHyper",
    "AdamState",
    "adam_step",
    "checksum64",
    "deserialize_params",
    "serialize_params",
]
