"""Paired random crop plus quarter-turn rotation."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ParameterError


def rotate(image: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate a (..., H, W) array counter-clockwise by 90 degrees per turn."""
    return np.rot90(image, k=quarter_turns, axes=(-2, -1))


def draw_augment(h: int, w: int, patch: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """Crop origin (y, x) and a rotation in quarter turns drawn from {0, 1, 2, 3}."""
    if patch < 1 or patch > min(h, w):
        raise ParameterError(f"patch {patch} does not fit an image of size {(h, w)}")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    return y, x, int(rng.integers(0, 4))


def apply_augment(image: np.ndarray, y: int, x: int, patch: int, turns: int) -> np.ndarray:
    crop = image[..., y:y + patch, x:x + patch]
    return np.ascontiguousarray(rotate(crop, turns))


def crop_rotate_augment(pair, patch: int, rng: np.random.Generator):
    """Apply one shared crop window and rotation to a (hazy, clean) pair."""
    hazy, clean = pair
    if hazy.shape != clean.shape:
        raise DimensionError(f"pair shapes differ: {hazy.shape} vs {clean.shape}")
    y, x, k = draw_augment(hazy.shape[-2], hazy.shape[-1], patch, rng)
    return apply_augment(hazy, y, x, patch, k), apply_augment(clean, y, x, patch, k)
