"""End-to-end network: alignment followed by merging."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import PAPER_FLOW_WIDTHS, AlignmentNet, AlignmentOutput
from .autodiff import Tensor, no_grad
from .merging import MergingNet
from .nn import Module


@dataclass(frozen=True)
class NetConfig:
    channels: int = 64
    reduction: int = 16
    flow_widths: tuple[int, ...] = PAPER_FLOW_WIDTHS
    hof_blocks: int = 5
    merge_blocks: int = 3


@dataclass
class NetOutput:
    hdr: Tensor
    h_of: Tensor
    flows: list[Tensor]
    alignment: AlignmentOutput = field(repr=False)


class MSFFNet(Module):
    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.align = AlignmentNet(config.channels, rng, config.reduction,
                                  config.flow_widths, config.hof_blocks)
        self.merge = MergingNet(config.channels, config.reduction, rng, config.merge_blocks)

    def __call__(self, x1: Tensor, xr: Tensor) -> NetOutput:
        aligned, pr = self.align(x1, xr)
        hdr = self.merge(aligned.fused, pr[0])
        return NetOutput(hdr, aligned.h_of, aligned.flows, aligned)


def pad_to_multiple(arr: np.ndarray, multiple: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the two trailing axes of an N x C x H x W array up to a multiple."""
    h, w = arr.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "edge"
        arr = np.pad(arr, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    return arr, (h, w)


def infer(model: MSFFNet, x1: np.ndarray, xr: np.ndarray) -> NetOutput:
    """Gradient-free forward on arbitrary sizes: pad to a multiple of 4, crop back."""
    p1, (h, w) = pad_to_multiple(x1)
    pr, _ = pad_to_multiple(xr)
    with no_grad():
        out = model(Tensor(p1), Tensor(pr))
    crop = lambda t: Tensor(t.data[:, :, :h, :w])  # noqa: E731
    flows = [Tensor(f.data[:, :, :-(-h // 2 ** s), :-(-w // 2 ** s)]) for s, f in enumerate(out.flows)]
    return NetOutput(crop(out.hdr), crop(out.h_of), flows, out.alignment)
