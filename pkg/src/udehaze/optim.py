"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamWState":
        state = cls(**hyper)
        if state.lr <= 0 or state.weight_decay < 0 or state.eps <= 0:
            raise ValueError("AdamW needs lr > 0, weight_decay >= 0, eps > 0")
        if not (0 <= state.beta1 < 1 and 0 <= state.beta2 < 1):
            raise ValueError("AdamW betas must lie in [0, 1)")
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adamw_step(params: Sequence[Tensor], state: AdamWState) -> None:
    """Apply one in-place AdamW update using each parameter's ``.grad``.

    Weight decay scales the weights directly by ``1 - lr * weight_decay``
    before the adaptive step. Parameters without a gradient are treated as
    having a zero gradient.
    """
    if len(params) != len(state.first_moment):
        raise ValueError(f"optimizer state tracks {len(state.first_moment)} tensors, got {len(params)}")
    grads = []
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape or state.first_moment[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {p.name or i}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name or i}")
        grads.append(g)

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class AdamW:
    """Thin stateful wrapper: ``opt.step()`` then ``opt.zero_grad()``."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, weight_decay=1e-4,
                 betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamWState.for_params(self.params, lr=lr, weight_decay=weight_decay,
                                           beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adamw_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
