from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of every parameter that has a gradient.

    Raises ``FloatingPointError`` naming the first parameter whose gradient is
    not finite; in that case no parameter is modified.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
            raise FloatingPointError(f"non-finite gradient in parameter {name!r} "
                                     f"({bad} of {p.grad.size} entries, shape {p.shape})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)


def cosine_lr(base: float, it: int, total: int) -> float:
    """Cosine decay from ``base`` at iteration 0 towards 0 at ``total``."""
    return 0.5 * base * (1.0 + np.cos(np.pi * min(it, total) / total))
