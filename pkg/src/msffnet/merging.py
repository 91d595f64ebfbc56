"""Residual channel attention blocks and the merging network."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .nn import Conv2d, Module


class RCAB(Module):
    """x + u * a, where u = conv2(relu(conv1(x))) and a is a per-channel sigmoid gate.

    conv2 starts at zero, so a fresh block is the identity.
    """

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if channels % reduction:
            raise ValueError(f"reduction ratio {reduction} must divide channel count {channels}")
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng, zero_init=True)
        self.down = Conv2d(channels, channels // reduction, 1, rng)
        self.up = Conv2d(channels // reduction, channels, 1, rng)

    def attention(self, u: Tensor) -> Tensor:
        return ops.sigmoid(self.up(ops.relu(self.down(ops.global_avg_pool(u)))))

    def __call__(self, x: Tensor) -> Tensor:
        u = self.conv2(ops.relu(self.conv1(x)))
        return x + ops.scale_broadcast(u, self.attention(u))


class MergingNet(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator, num_blocks: int = 3):
        self.head = Conv2d(3 * channels, channels, 3, rng)
        self.blocks = [RCAB(channels, reduction, rng) for _ in range(num_blocks)]
        self.fuse = Conv2d(num_blocks * channels, channels, 3, rng)
        self.refine = Conv2d(channels, channels, 3, rng)
        self.out = Conv2d(channels, 3, 3, rng)

    def __call__(self, z0: Tensor, fr0: Tensor) -> Tensor:
        z = ops.relu(self.head(z0))
        feats = []
        for block in self.blocks:
            z = block(z)
            feats.append(z)
        t = ops.relu(self.fuse(ops.concat_channels(feats))) + fr0  # global skip
        t = ops.relu(self.refine(t))
        return ops.sigmoid(self.out(t))
