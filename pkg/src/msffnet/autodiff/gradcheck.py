"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward, get_precision


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_samples: int | None = None, seed: int = 0) -> float:
    """Max over checked elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).

    Non-scalar outputs are contracted with a fixed random projection. With
    ``max_samples`` only that many randomly chosen elements per input are probed.
    """
    if get_precision() != "float64":
        raise RuntimeError("grad_check requires float64 mode")
    rng = np.random.default_rng(seed)
    probe = fn(*inputs)
    proj = None if probe.data.size == 1 else rng.standard_normal(probe.shape)

    def objective() -> Tensor:
        out = fn(*inputs)
        return out if proj is None else ops.sum(ops.mul(out, Tensor(proj)))

    for t in inputs:
        t.grad = None
    backward(objective())
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)  # probing edits leaf data in place, restored below
        picks = np.arange(flat.size)
        if max_samples is not None and flat.size > max_samples:
            picks = rng.choice(flat.size, size=max_samples, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = objective().item()
            flat[i] = orig - eps
            f_minus = objective().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
