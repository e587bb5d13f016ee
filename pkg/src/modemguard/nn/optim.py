from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, t: int | None = None) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update. Updates ``params`` and ``state`` in place and returns both."""
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.t = t
    return params, state
