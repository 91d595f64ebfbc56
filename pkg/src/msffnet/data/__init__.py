"""Exposure stacks, file formats, patching and synthetic scenes."""
from .hdr import (GAMMA, ExposureStack, HdrImage, LdrImage, gamma_to_hdr, input_array, list_scenes,
                  load_hdr, load_ldr, load_scene, make_input, save_hdr, save_scene)
from .io import ImageIOError, InvalidDimensionsError, TruncatedFileError, UnknownFormatError
from .synth import SyntheticSample, saturation_mask, synth_scene
from .patches import augment, crop_patches, dihedral, inverse_transform, transform_flow

__all__ = [
    "GAMMA", "ExposureStack", "HdrImage", "ImageIOError", "InvalidDimensionsError", "LdrImage",
    "SyntheticSample", "TruncatedFileError", "UnknownFormatError", "augment", "crop_patches",
    "dihedral", "gamma_to_hdr", "input_array", "inverse_transform", "list_scenes", "load_hdr",
    "load_ldr", "load_scene", "make_input", "save_hdr", "save_scene", "saturation_mask",
    "synth_scene", "transform_flow",
]
