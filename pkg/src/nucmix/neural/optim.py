from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamHyper = AdamHyper(),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place, in the dtype of each parameter.

    Parameters without a gradient entry are left alone.  The step counter
    advances once per call.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
        if params[name].shape != g.shape:
            raise ShapeMismatch(f"{name}: param {params[name].shape} vs grad {g.shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for name, g in grads.items():
        p = params[name]
        dt = p.dtype.type
        g = g.astype(p.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= dt(hyper.beta1)
        m += dt(1.0 - hyper.beta1) * g
        v *= dt(hyper.beta2)
        v += dt(1.0 - hyper.beta2) * (g * g)
        upd = (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(hyper.eps))
        p -= dt(hyper.lr) * upd
    return params, state
