"""Parameter containers: a small Module base and a Conv2d layer."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor, ops


class Module:
    """Parameters are Tensor attributes with requires_grad; children are Modules or lists of them."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Conv2d(Module):
    """Square-kernel convolution with 'same' padding for odd kernels.

    Weights draw from U(-b, b) with b = sqrt(6 / fan_in) unless ``zero_init``.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, zero_init: bool = False):
        self.stride = stride
        self.padding = (kernel - 1) // 2
        fan_in = in_ch * kernel * kernel
        if zero_init:
            w = np.zeros((out_ch, in_ch, kernel, kernel))
        else:
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(out_ch, in_ch, kernel, kernel))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)
