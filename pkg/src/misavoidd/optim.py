"""Adam with per-epoch exponential learning-rate decay, and gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is None:
            raise ValueError("gradient missing for a parameter; call backward first")
        g = p.grad.ravel()
        total += float(np.dot(g, g))
    return float(np.sqrt(total))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the factor applied (1.0 when no clipping was needed).
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = global_grad_norm(params)
    if total <= max_norm:
        return 1.0
    factor = max_norm / total
    for p in params:
        p.grad *= factor
    return factor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.98
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> AdamState:
        state = cls(**kwargs)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state

    def decay(self) -> float:
        """Apply one epoch of exponential decay; returns the new rate."""
        self.lr *= self.decay_rate
        return self.lr


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    if len(state.m) != len(params):
        raise ValueError(f"optimizer holds {len(state.m)} slots but got {len(params)} parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError("gradient missing for a parameter; call backward first")
        if state.m[i].shape != p.data.shape:
            raise ValueError(f"optimizer slot {i} has shape {state.m[i].shape}, parameter has {p.data.shape}")
        g = p.grad
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p.data = p.data - (state.lr / c1) * m / denom
        p.grad = np.zeros_like(p.data)
