"""Procedural two-exposure scenes with known HDR radiance and known motion.

The latent scene is a continuous function of image coordinates (random sinusoids
plus hard-edged rectangles), so a translated view can be rendered exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hdr import GAMMA, ExposureStack, HdrImage, LdrImage

DARK_FLOOR = 0.01  # keeps radiance out of the steep toe of the mu-law curve


@dataclass(frozen=True)
class SyntheticSample:
    stack: ExposureStack
    gt_flow: np.ndarray  # 2 x H x W, (dx, dy) from image 1 toward the reference, in pixels
    occlusion_mask: np.ndarray  # H x W uint8, 1 where the flow points outside image 1

    def __post_init__(self):
        if not np.all(np.isfinite(self.gt_flow)):
            raise ValueError("gt_flow must be finite")
        if not np.isin(self.occlusion_mask, (0, 1)).all():
            raise ValueError("occlusion mask must be binary")


class _Texture:
    """Band-limited sinusoids with a colour tint, overlaid by random rectangles."""

    def __init__(self, rng: np.random.Generator, size: int, n_waves: int = 6, n_rects: int = 6):
        self.size = size
        angles = rng.uniform(0, 2 * np.pi, n_waves)
        freqs = rng.uniform(1.0, 5.0, n_waves) / size
        self.kx = 2 * np.pi * freqs * np.cos(angles)
        self.ky = 2 * np.pi * freqs * np.sin(angles)
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.amp = rng.uniform(0.3, 1.0, n_waves)
        self.tint = rng.uniform(0.6, 1.0, 3)
        self.chroma = rng.uniform(0, 2 * np.pi, (3, 2))
        lo, hi = -size / 4, 5 * size / 4
        self.rects = []
        for _ in range(n_rects):
            w, h = rng.uniform(size / 8, size / 3, 2)
            x0, y0 = rng.uniform(lo, hi - w), rng.uniform(lo, hi - h)
            self.rects.append((x0, y0, x0 + w, y0 + h, rng.uniform(0, 2, 3)))

    def __call__(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        lum = np.zeros_like(xs)
        for kx, ky, ph, a in zip(self.kx, self.ky, self.phase, self.amp):
            lum += a * np.sin(kx * xs + ky * ys + ph)
        out = np.empty(xs.shape + (3,))
        for c in range(3):
            wobble = 0.25 * np.sin(2 * np.pi * xs / self.size + self.chroma[c, 0]) \
                * np.cos(2 * np.pi * ys / self.size + self.chroma[c, 1])
            out[..., c] = self.tint[c] * lum + wobble
        for x0, y0, x1, y1, color in self.rects:
            inside = (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
            out[inside] = color + 0.3 * lum[inside, None]
        return out


def _radiance_map(t_ref: np.ndarray, threshold: float, saturation_fraction: float):
    """Affine map from raw texture values to radiance with the requested clipped fraction."""
    t_min = t_ref.min()
    if saturation_fraction > 0:
        # a pixel saturates when its brightest channel does
        q = np.quantile(t_ref.max(axis=-1), 1.0 - saturation_fraction)
        scale = (threshold - DARK_FLOOR) / max(q - t_min, 1e-12)
    else:
        scale = (0.9 * threshold - DARK_FLOOR) / max(t_ref.max() - t_min, 1e-12)
    return lambda t: np.clip(DARK_FLOOR + (t - t_min) * scale, 0.0, 1.0)


def expose(radiance: np.ndarray, exposure: float, gamma: float = GAMMA) -> np.ndarray:
    """Camera response: clip((H * t) ** (1 / gamma)) into [0, 1]."""
    return np.clip((radiance * exposure) ** (1.0 / gamma), 0.0, 1.0)


def synth_scene(seed: int, translation=(0.0, 0.0), exposures=(1.0, 4.0),
                saturation_fraction: float = 0.0, size: int = 64, gamma: float = GAMMA) -> SyntheticSample:
    """Render a scene whose first exposure is the reference content moved by ``translation``."""
    dx, dy = float(translation[0]), float(translation[1])
    if abs(dx) > size / 4 or abs(dy) > size / 4:
        raise ValueError(f"translation {translation} exceeds size/4 = {size / 4}")
    t1, t2 = exposures
    if not 0 <= saturation_fraction < 1:
        raise ValueError(f"saturation fraction must lie in [0, 1), got {saturation_fraction}")
    rng = np.random.default_rng(seed)
    texture = _Texture(rng, size)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    raw_ref = texture(xs, ys)
    raw_moved = texture(xs - dx, ys - dy)
    to_radiance = _radiance_map(raw_ref, min(1.0, 1.0 / t2), saturation_fraction)
    h_ref = to_radiance(raw_ref)
    h_moved = to_radiance(raw_moved)
    ldr1 = LdrImage(expose(h_moved, t1, gamma).astype(np.float32), t1)
    ldr2 = LdrImage(expose(h_ref, t2, gamma).astype(np.float32), t2)
    stack = ExposureStack((ldr1, ldr2), HdrImage(h_ref.astype(np.float32)))
    flow = np.stack([np.full((size, size), dx), np.full((size, size), dy)]).astype(np.float32)
    src_x, src_y = xs + dx, ys + dy
    occluded = (src_x < 0) | (src_x > size - 1) | (src_y < 0) | (src_y > size - 1)
    return SyntheticSample(stack, flow, occluded.astype(np.uint8))


def saturation_mask(ldr: LdrImage, threshold: float = 0.999) -> np.ndarray:
    """H x W bool: any channel at (or within rounding of) the top code."""
    return (ldr.pixels >= threshold).any(axis=2)
