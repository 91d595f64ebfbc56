"""Exposure stacks, the gamma-domain mapping and network input construction."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from . import io

GAMMA = 2.2
REFERENCE_INDEX = 2  # 1-based: the longer exposure is the reference


@dataclass(frozen=True)
class LdrImage:
    pixels: np.ndarray  # H x W x 3 in [0, 1]
    exposure: float

    def __post_init__(self):
        if self.exposure <= 0:
            raise ValueError(f"exposure time must be positive, got {self.exposure}")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"LDR pixels must be H x W x 3, got {self.pixels.shape}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("LDR pixels must lie in [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


@dataclass(frozen=True)
class HdrImage:
    pixels: np.ndarray  # H x W x 3, non-negative

    def __post_init__(self):
        if self.pixels.min() < 0:
            raise ValueError("HDR pixels must be non-negative")


@dataclass(frozen=True)
class ExposureStack:
    ldr: tuple[LdrImage, LdrImage]
    gt: HdrImage | None = None

    def __post_init__(self):
        if len(self.ldr) != 2:
            raise ValueError(f"exactly two exposures are supported, got {len(self.ldr)}")
        lo, hi = self.ldr
        if not lo.exposure < hi.exposure and not np.isclose(lo.exposure, hi.exposure):
            raise ValueError(f"exposures must be ascending, got {lo.exposure} and {hi.exposure}")
        if lo.size != hi.size or (self.gt is not None and self.gt.pixels.shape[:2] != lo.size):
            raise ValueError("all images in a stack must share H x W")

    @property
    def reference(self) -> LdrImage:
        return self.ldr[REFERENCE_INDEX - 1]

    @property
    def size(self) -> tuple[int, int]:
        return self.ldr[0].size


def gamma_to_hdr(ldr: LdrImage, gamma: float = GAMMA) -> HdrImage:
    """Linearize with the camera gamma and divide by exposure time."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return HdrImage((ldr.pixels ** gamma / ldr.exposure).astype(np.float32))


def input_array(ldr: LdrImage, gamma: float = GAMMA) -> np.ndarray:
    """6 x H x W array: LDR channels followed by their HDR mapping."""
    hdr = gamma_to_hdr(ldr, gamma).pixels
    return np.concatenate([ldr.pixels, hdr], axis=2).transpose(2, 0, 1).astype(np.float32)


def make_input(ldr: LdrImage, gamma: float = GAMMA) -> Tensor:
    return Tensor(input_array(ldr, gamma)[None])


def to_nchw(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)[None])


def from_nchw(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[0].transpose(1, 2, 0))


# ------------------------------------------------------------- scene folders

def load_ldr(path, exposure: float = 1.0) -> LdrImage:
    return LdrImage(io.read_ldr_pixels(path), exposure)


def save_hdr(path, image: HdrImage) -> None:
    io.write_pfm(path, image.pixels)


def load_hdr(path) -> HdrImage:
    return HdrImage(io.read_pfm(path))


def _find_input(scene: Path, index: int) -> Path:
    for ext in (".png", ".ppm"):
        candidate = scene / f"input_{index}{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{scene}: missing input_{index}.png/.ppm")


def load_scene(scene) -> ExposureStack:
    """Read ``input_1``, ``input_2``, ``exposures.txt`` and optional ``gt.pfm``."""
    scene = Path(scene)
    times = io.read_exposures(scene / "exposures.txt")
    if len(times) < 2:
        raise io.ImageIOError(f"{scene}: exposures.txt needs two lines")
    ldr = tuple(load_ldr(_find_input(scene, i + 1), times[i]) for i in range(2))
    gt_path = scene / "gt.pfm"
    gt = load_hdr(gt_path) if gt_path.exists() else None
    return ExposureStack(ldr, gt)


def save_scene(scene, stack: ExposureStack, bits: int = 16) -> None:
    scene = Path(scene)
    scene.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(stack.ldr):
        io.write_ldr_pixels(scene / f"input_{i + 1}.png", img.pixels, bits)
    io.write_exposures(scene / "exposures.txt", [img.exposure for img in stack.ldr])
    if stack.gt is not None:
        save_hdr(scene / "gt.pfm", stack.gt)


def list_scenes(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "exposures.txt").exists())


def with_pixels(stack: ExposureStack, fn) -> ExposureStack:
    """Apply one array transform to every image of a stack."""
    ldr = tuple(replace(img, pixels=fn(img.pixels)) for img in stack.ldr)
    gt = None if stack.gt is None else HdrImage(fn(stack.gt.pixels))
    return ExposureStack(ldr, gt)
