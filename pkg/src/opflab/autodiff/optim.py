"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["AdamState", "NonFiniteGradient", "adam_step"]


class NonFiniteGradient(FloatingPointError):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Update ``params`` (name -> ndarray or Tensor) in place from ``grads``.

    All gradients are checked before any parameter moves, so a bad block
    leaves the model and the optimizer state untouched.
    """
    for name in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        data = p.data if isinstance(p, Tensor) else p
        if g.shape != data.shape:
            raise ValueError(f"gradient {g.shape} does not match parameter {name!r} {data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(data)
            state.v[name] = np.zeros_like(data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
