"""Input validation and image I/O helpers."""

from __future__ import annotations

import numpy as np
from PIL import Image
from sklearn.utils import check_array

from .errors import InvalidArgumentError


def check_image(img) -> np.ndarray:
    """Validate an image array: 2-D grayscale or 3-D with 1/3 channels."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] in (1, 3):
        pass
    elif arr.ndim == 2:
        pass
    else:
        raise InvalidArgumentError(f"expected HxW or HxWx{{1,3}} image, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError("empty image")
    if not np.issubdtype(arr.dtype, np.number):
        raise InvalidArgumentError(f"non-numeric image dtype {arr.dtype}")
    return arr


def to_grayscale(img) -> np.ndarray:
    """Convert to a float64 single-channel image."""
    arr = check_image(img).astype(np.float64)
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        else:
            arr = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    return arr


def check_points(points) -> np.ndarray:
    """Validate an (N, 2) array of finite point coordinates."""
    return check_array(points, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
                       ensure_min_features=2)


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file into an 8-bit array (HxW or HxWx3)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im)


def save_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
