"""Adam with bias correction and a single-arc cosine learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor


def cosine_lr(epoch: float, total_epochs: float, lr_init: float, lr_final: float) -> float:
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    if total_epochs == 0:
        return lr_init
    return lr_final + 0.5 * (lr_init - lr_final) * (1 + math.cos(math.pi * epoch / total_epochs))


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, lr_scale: dict[str, float] | None = None):
        self.params = params
        self.lr_scale = lr_scale or {}  # per-parameter multiplier on the step size
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"no gradient for trainable parameters: {', '.join(missing[:5])}"
                               + (" ..." if len(missing) > 5 else ""))
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            dt = p.data.dtype
            self.m[k] = (b1 * self.m[k] + (1 - b1) * g).astype(dt)
            self.v[k] = (b2 * self.v[k] + (1 - b2) * g * g).astype(dt)
            update = lr * self.lr_scale.get(k, 1.0) * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data = (p.data - update).astype(dt)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for key in ("m", "v"):
            src = state[key]
            if set(src) != set(self.params):
                raise KeyError(f"optimizer state '{key}' does not match the parameter set")
            setattr(self, key, {k: np.array(src[k], dtype=self.params[k].dtype) for k in self.params})
