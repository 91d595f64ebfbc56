"""Patch grids and dihedral augmentation for stacks and synthetic samples."""
from __future__ import annotations

import numpy as np

from .hdr import ExposureStack, with_pixels
from .synth import SyntheticSample


def window_offsets(length: int, size: int, stride: int) -> list[int]:
    """Regular offsets; a final window anchored to the far edge covers any remainder."""
    if size > length:
        raise ValueError(f"patch size {size} exceeds image extent {length}")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    offsets = list(range(0, length - size + 1, stride))
    if offsets[-1] + size < length:
        offsets.append(length - size)
    return offsets


def crop_patches(sample, size: int, stride: int) -> list:
    """Crop an ExposureStack or SyntheticSample into aligned size x size patches."""
    stack = sample.stack if isinstance(sample, SyntheticSample) else sample
    h, w = stack.size
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image size {h}x{w}")
    patches = []
    for y in window_offsets(h, size, stride):
        for x in window_offsets(w, size, stride):
            def cut(a, y=y, x=x):
                return np.ascontiguousarray(a[y:y + size, x:x + size])
            patches.append(_map(sample, cut, lambda f, y=y, x=x: f[:, y:y + size, x:x + size].copy()))
    return patches


def _map(sample, image_fn, flow_fn):
    if isinstance(sample, SyntheticSample):
        return SyntheticSample(with_pixels(sample.stack, image_fn), flow_fn(sample.gt_flow),
                               image_fn(sample.occlusion_mask))
    return with_pixels(sample, image_fn)


# --------------------------------------------------------------- augmentation
# A transform is an index 0..7: bit 2 selects a left-right flip applied first,
# the low two bits count 90-degree counter-clockwise rotations (np.rot90).

NUM_TRANSFORMS = 8
_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])  # (dx, dy) -> (dy, -dx) under one np.rot90 turn
_FLIP = np.array([[-1.0, 0.0], [0.0, 1.0]])


def dihedral(arr: np.ndarray, transform: int) -> np.ndarray:
    """Transform the two leading (H, W) axes of an array."""
    flip, turns = divmod(transform, 4)
    if flip:
        arr = arr[:, ::-1]
    return np.ascontiguousarray(np.rot90(arr, turns, axes=(0, 1)))


def inverse_transform(transform: int) -> int:
    flip, turns = divmod(transform, 4)
    return transform if flip else (-turns) % 4


def compose(first: int, second: int) -> int:
    """Index of applying ``first`` then ``second``."""
    probe = np.arange(6).reshape(2, 3)
    target = dihedral(dihedral(probe, first), second)
    for t in range(NUM_TRANSFORMS):
        out = dihedral(probe, t)
        if out.shape == target.shape and np.array_equal(out, target):
            return t
    raise AssertionError("dihedral group not closed")  # pragma: no cover


def transform_flow(flow: np.ndarray, transform: int) -> np.ndarray:
    """Move a 2 x H x W displacement field and rotate/reflect its vectors to match."""
    flip, turns = divmod(transform, 4)
    mat = np.linalg.matrix_power(_ROT, turns) @ (_FLIP if flip else np.eye(2))
    moved = np.stack([dihedral(flow[c], transform) for c in range(2)])
    return np.einsum("ij,jhw->ihw", mat, moved).astype(flow.dtype)


def augment(sample, seed: int | None = None, transform: int | None = None,
            rng: np.random.Generator | None = None):
    """Apply one of the 8 dihedral transforms identically to all images (and flow)."""
    if transform is None:
        rng = rng if rng is not None else np.random.default_rng(seed)
        transform = int(rng.integers(NUM_TRANSFORMS))
    stack = sample.stack if isinstance(sample, SyntheticSample) else sample
    h, w = stack.size
    if h != w and transform % 2:
        raise ValueError(f"90-degree rotation needs a square patch, got {h}x{w}")
    if isinstance(sample, SyntheticSample):
        return SyntheticSample(with_pixels(sample.stack, lambda a: dihedral(a, transform)),
                               transform_flow(sample.gt_flow, transform),
                               dihedral(sample.occlusion_mask, transform))
    return with_pixels(sample, lambda a: dihedral(a, transform))


def as_stack(sample) -> ExposureStack:
    return sample.stack if isinstance(sample, SyntheticSample) else sample

