"""Synthetic night-haze data, image IO, augmentation and manifests."""
from .augment import crop_rotate_augment
from .imageio import load_image, save_image
from .manifest import Manifest, load_pairs, read_manifest, write_synthetic_dataset
from .synth import HazeParams, HazeSample, Light, make_pairs, night_scene, synth_haze

__all__ = [
    "HazeParams", "HazeSample", "Light", "Manifest", "crop_rotate_augment", "load_image",
    "load_pairs", "make_pairs", "night_scene", "read_manifest", "save_image", "synth_haze",
    "write_synthetic_dataset",
]
