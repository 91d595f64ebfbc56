"""Alignment network: feature pyramid, coarse-to-fine feature flow, fusion, and the H_of head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops
from .merging import RCAB
from .nn import Conv2d, Module

NUM_SCALES = 3
PAPER_FLOW_WIDTHS = (64, 64, 32, 16)


@dataclass
class FeaturePyramid:
    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != NUM_SCALES:
            raise ValueError(f"pyramid needs {NUM_SCALES} levels, got {len(self.levels)}")
        chans = {lv.shape[1] for lv in self.levels}
        if len(chans) != 1:
            raise ValueError(f"pyramid levels disagree on channel count: {sorted(chans)}")

    def __getitem__(self, s: int) -> Tensor:
        return self.levels[s]


@dataclass
class AlignmentOutput:
    warped: list[Tensor]
    flows: list[Tensor]
    fused: Tensor
    h_of: Tensor


class FeatureExtractor(Module):
    """3x3 conv stride 1, then two stride-2 convs; ReLU after each."""

    def __init__(self, channels: int, rng: np.random.Generator, in_ch: int = 6):
        self.convs = [Conv2d(in_ch, channels, 3, rng),
                      Conv2d(channels, channels, 3, rng, stride=2),
                      Conv2d(channels, channels, 3, rng, stride=2)]

    def __call__(self, x: Tensor) -> FeaturePyramid:
        levels = []
        h = x
        for conv in self.convs:
            h = ops.relu(conv(h))
            levels.append(h)
        return FeaturePyramid(levels)


class FlowEstimator(Module):
    """Five 7x7 convs mapping 2C channels to a 2-channel flow; last layer starts at zero."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 widths: Sequence[int] = PAPER_FLOW_WIDTHS):
        dims = [2 * channels, *widths, 2]
        self.convs = [Conv2d(dims[i], dims[i + 1], 7, rng, zero_init=(i == len(dims) - 2))
                      for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.convs[:-1]:
            x = ops.relu(conv(x))
        return self.convs[-1](x)


def upsample_flow(flow: Tensor) -> Tensor:
    """Double resolution and displacement magnitude."""
    return ops.bilinear_upsample(flow, 2) * 2.0


def estimate_flow_level(estimator: FlowEstimator, f1: Tensor, fr: Tensor,
                        upflow: Tensor | None = None) -> tuple[Tensor, Tensor]:
    if f1.shape != fr.shape:
        raise ValueError(f"feature shapes differ: {f1.shape} vs {fr.shape}")
    if upflow is None:
        flow = estimator(ops.concat_channels([f1, fr]))
    else:
        pre = ops.warp_bilinear(f1, upflow)
        flow = upflow + estimator(ops.concat_channels([pre, fr]))
    return flow, ops.warp_bilinear(f1, flow)


def ms_flow(estimators: Sequence[FlowEstimator], p1: FeaturePyramid,
            pr: FeaturePyramid) -> tuple[list[Tensor], list[Tensor]]:
    """Coarse-to-fine flow from scale 2 down to 0; returns per-scale flows and warped maps."""
    flows: list[Tensor | None] = [None] * NUM_SCALES
    warped: list[Tensor | None] = [None] * NUM_SCALES
    upflow = None
    for s in reversed(range(NUM_SCALES)):
        flows[s], warped[s] = estimate_flow_level(estimators[s], p1[s], pr[s], upflow)
        if s > 0:
            upflow = upsample_flow(flows[s])
    return flows, warped


class MSFuse(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.convs = [Conv2d(2 * channels, channels, 3, rng) for _ in range(NUM_SCALES)]

    def __call__(self, warped: Sequence[Tensor], pr: FeaturePyramid) -> Tensor:
        outs = []
        for s in range(NUM_SCALES):
            o = ops.relu(self.convs[s](ops.concat_channels([warped[s], pr[s]])))
            if s > 0:
                o = ops.bilinear_upsample(o, 2 ** s)
            outs.append(o)
        return ops.concat_channels(outs)


class HofHead(Module):
    """Reconstructs an HDR image from warped non-reference features only."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int, num_blocks: int = 5):
        self.head = Conv2d(3 * channels, channels, 3, rng)
        self.blocks = [RCAB(channels, reduction, rng) for _ in range(num_blocks)]
        self.tail = Conv2d(channels, 3, 3, rng)

    def __call__(self, warped: Sequence[Tensor]) -> Tensor:
        ups = [warped[0]] + [ops.bilinear_upsample(warped[s], 2 ** s) for s in range(1, NUM_SCALES)]
        h = ops.relu(self.head(ops.concat_channels(ups)))
        for block in self.blocks:
            h = block(h)
        return ops.sigmoid(self.tail(h))


class AlignmentNet(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int,
                 flow_widths: Sequence[int] = PAPER_FLOW_WIDTHS, hof_blocks: int = 5):
        self.extractor = FeatureExtractor(channels, rng)
        self.estimators = [FlowEstimator(channels, rng, flow_widths) for _ in range(NUM_SCALES)]
        self.fuse = MSFuse(channels, rng)
        self.hof = HofHead(channels, rng, reduction, hof_blocks)

    def __call__(self, x1: Tensor, xr: Tensor) -> tuple[AlignmentOutput, FeaturePyramid]:
        h, w = x1.shape[2:]
        if h % 4 or w % 4:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 4; pad first")
        p1 = self.extractor(x1)
        pr = self.extractor(xr)
        flows, warped = ms_flow(self.estimators, p1, pr)
        fused = self.fuse(warped, pr)
        return AlignmentOutput(warped, flows, fused, self.hof(warped)), pr
