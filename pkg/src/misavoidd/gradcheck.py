"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class NonDeterministicError(RuntimeError):
    pass


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | Tensor,
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare backprop gradients of ``f`` against central differences.

    ``f`` takes no arguments and must read ``params`` (mutated in place).
    Returns the maximum over checked coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    With ``max_coords`` set, a seeded random subset of each parameter's
    coordinates is checked.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)

    out = f()
    ref = float(out.item())
    if float(f().item()) != ref:
        raise NonDeterministicError("function returned different values on repeated evaluation")
    backward(out)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().item())
            flat[i] = orig - h
            fm = float(f().item())
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic.reshape(-1)[i])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
