"""Training objective: CMD invariance, soft orthogonality, reconstruction and
cross-entropy terms, plus their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import SubspaceReps
from .tensor import Tensor

PROB_CLAMP = 1e-7
MIN_RANGE = 1e-3


@dataclass
class LossWeights:
    alpha: float = 0.7
    beta: float = 1.0
    gamma: float = 0.7
    cmd_order: int = 5

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.cmd_order < 1:
            raise ValueError("cmd_order must be >= 1")


@dataclass
class LossBreakdown:
    l_inv: float
    l_orth: float
    l_sim: float
    l_cls: float
    l_total: float
    total: Tensor  # differentiable graph root

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("l_inv", "l_orth", "l_sim", "l_cls", "l_total")}


def cmd(X: Tensor, Y: Tensor, K: int = 5) -> Tensor:
    """Central moment discrepancy between sample sets ``X`` [B, d] and ``Y`` [B', d].

    Mean and order-2..K central-moment differences are scaled per
    coordinate by the joint sample range (at least 1e-3), raised to the
    moment order, and their L2 norms summed.
    """
    X, Y = T.as_tensor(X), T.as_tensor(Y)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise T.ShapeError(f"cmd: need [B, d] inputs with equal d, got {X.shape} and {Y.shape}")
    if X.shape[0] < 2 or Y.shape[0] < 2:
        raise ValueError(f"cmd: need at least 2 samples per set, got {X.shape[0]} and {Y.shape[0]}")
    if K < 1:
        raise ValueError("cmd: order must be >= 1")
    joint = T.concat([X, Y], axis=0)
    width = T.maximum(T.sub(T.amax(joint, axis=0), T.amin(joint, axis=0)), MIN_RANGE)
    mx, my = T.mean(X, axis=0), T.mean(Y, axis=0)
    total = T.norm(T.div(T.sub(mx, my), width))
    cx, cy = T.sub(X, mx), T.sub(Y, my)
    for k in range(2, K + 1):
        diff = T.sub(T.mean(T.power(cx, k), axis=0), T.mean(T.power(cy, k), axis=0))
        total = T.add(total, T.norm(T.div(diff, T.power(width, k))))
    return total


def normalize_rows(H: Tensor, center: bool | None = None) -> Tensor:
    """Subtract the batch mean (skipped when B == 1), then scale rows to unit L2 norm.

    Rows that are zero after centering stay zero.
    """
    if center is None:
        center = H.shape[0] > 1
    if center:
        H = T.sub(H, T.mean(H, axis=0, keepdims=True))
    n = T.norm(H, axis=1, keepdims=True)
    return T.div(H, T.maximum(n, 1e-12))


def _frob2(A: Tensor, B: Tensor) -> Tensor:
    return T.sum_squares(T.matmul(A, T.transpose(B)))


def orthogonality_loss(reps: SubspaceReps, center: bool | None = None) -> Tensor:
    """Squared Frobenius overlap between specific/invariant and specific/specific pairs.

    The cross-specific term is summed in both orders. Terms whose
    representations are absent (subspace ablations) are dropped.
    """
    norm = {k: normalize_rows(v, center) for k, v in
            (("h_a", reps.h_a), ("h_v", reps.h_v), ("g_a", reps.g_a), ("g_v", reps.g_v)) if v is not None}
    terms = []
    for m in ("a", "v"):
        if f"h_{m}" in norm and f"g_{m}" in norm:
            terms.append(_frob2(norm[f"h_{m}"], norm[f"g_{m}"]))
    if "h_a" in norm and "h_v" in norm:
        terms.append(_frob2(norm["h_a"], norm["h_v"]))
        terms.append(_frob2(norm["h_v"], norm["h_a"]))
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


def reconstruction_loss(reps: SubspaceReps) -> Tensor:
    """Half the sum over modalities of the batch-mean squared error per feature."""
    total = None
    for u, r in ((reps.u_a, reps.recon_a), (reps.u_v, reps.recon_v)):
        if u.shape != r.shape:
            raise T.ShapeError(f"reconstruction: shapes {u.shape} and {r.shape} differ")
        term = T.mean(T.power(T.sub(u, r), 2))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 0.5)


def classification_loss(y_hat: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y_hat = T.as_tensor(y_hat)
    if y_hat.shape != y.shape:
        raise T.ShapeError(f"classification: predictions {y_hat.shape} vs labels {y.shape}")
    p = T.clip(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = T.add(T.mul(T.log(p), Tensor(y)), T.mul(T.log(T.sub(1.0, p)), Tensor(1.0 - y)))
    return T.scale(T.mean(ll), -1.0)


def combined_loss(reps: SubspaceReps, y_hat: Tensor, y, w: LossWeights | None = None) -> LossBreakdown:
    """Weighted objective. Terms with zero weight are skipped and reported as 0.

    CMD needs two samples per set, so a single-sequence batch has l_inv = 0.
    """
    w = w or LossWeights()
    w.validate()
    zero = Tensor(0.0)
    l_inv = l_orth = l_sim = zero
    if w.alpha != 0.0 and reps.g_a is not None and reps.g_a.shape[0] >= 2:
        l_inv = cmd(reps.g_a, reps.g_v, w.cmd_order)
    if w.beta != 0.0:
        l_orth = orthogonality_loss(reps)
    if w.gamma != 0.0:
        l_sim = reconstruction_loss(reps)
    l_cls = classification_loss(y_hat, y)
    total = l_cls
    for weight, term in ((w.alpha, l_inv), (w.beta, l_orth), (w.gamma, l_sim)):
        if term is not zero:
            total = T.add(total, T.scale(term, weight))
    parts = [float(t.item()) for t in (l_inv, l_orth, l_sim, l_cls)]
    return LossBreakdown(*parts, l_total=float(total.item()), total=total)


def breakdown_residual(b: LossBreakdown, w: LossWeights) -> float:
    """|l_total - (alpha l_inv + beta l_orth + gamma l_sim + l_cls)|."""
    return abs(b.l_total - (w.alpha * b.l_inv + w.beta * b.l_orth + w.gamma * b.l_sim + b.l_cls))
