"""Synthetic grasp scenes: primitives, generation, rendering, augmentation, persistence."""

from .augment import AugmentParams, apply_augmentation, augment, in_plane_rotation
from .dataset import read_dataset, read_sample, write_dataset, write_sample
from .primitives import KINDS, PrimitiveSpec
from .render import BACKGROUND, render, render_splats
from .scene import PlacementError, SceneSample, generate_scene, generate_scenes, sample_seeds, scene_ids

__all__ = [
    "AugmentParams", "apply_augmentation", "augment", "in_plane_rotation",
    "read_dataset", "read_sample", "write_dataset", "write_sample",
    "KINDS", "PrimitiveSpec", "BACKGROUND", "render", "render_splats",
    "PlacementError", "SceneSample", "generate_scene", "generate_scenes", "sample_seeds", "scene_ids",
]
