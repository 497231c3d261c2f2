"""8-bit RGB raster IO; arrays are float32 (3, H, W) in [0, 1]."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..core.tensor import Tensor
from ..errors import ImageIOError, RangeError


def load_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    return (rgb.transpose(2, 0, 1) / 255.0).astype(np.float32)


def to_uint8(image) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) values in [0, 1] -> (H, W, 3) uint8."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ImageIOError(f"save_image takes one image, got batch of {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ImageIOError(f"expected a (3, H, W) image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise RangeError("image contains non-finite values")
    q = np.clip(np.round(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255)
    return q.astype(np.uint8).transpose(1, 2, 0)


def save_image(image, path) -> None:
    """Quantize to 8 bits and write atomically; the format follows the suffix."""
    path = Path(path)
    pixels = to_uint8(image)
    if not path.parent.is_dir():
        raise ImageIOError(f"cannot write image {path}: directory does not exist")
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=path.suffix or ".png")
    os.close(fd)
    try:
        Image.fromarray(pixels).save(tmp, format=_format(path))
        os.replace(tmp, path)
    except (OSError, ValueError) as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def _format(path: Path) -> str:
    ext = path.suffix.lower()
    return {".png": "PNG", ".bmp": "BMP", ".ppm": "PPM", ".tif": "TIFF",
            ".tiff": "TIFF"}.get(ext, "PNG")
