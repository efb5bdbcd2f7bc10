"""8-bit PNG reading and writing (grayscale and RGB only).

Masks serialize with 255 for the known region and 0 for the missing one;
reading a mask rejects any intermediate value.
"""

import numpy as np
from PIL import Image

from .masking import Mask


class FileError(OSError):
    """Unreadable, unwritable, or malformed image file."""


def read_image(path):
    """Load a PNG as uint8: (H, W) for grayscale, (H, W, 3) for color."""
    try:
        with Image.open(path) as img:
            if img.mode in ("1", "L", "LA", "I;16", "I"):
                converted = img.convert("L")
                return np.asarray(converted, dtype=np.uint8)
            converted = img.convert("RGB")
            return np.asarray(converted, dtype=np.uint8)
    except FileNotFoundError as e:
        raise FileError(f"cannot read {path}: file not found") from e
    except OSError as e:
        raise FileError(f"cannot read {path}: {e}") from e


def read_gray(path):
    a = read_image(path)
    if a.ndim == 3:
        from .lbp import rgb_to_gray

        return rgb_to_gray(a).pixels
    return a


def read_rgb(path):
    a = read_image(path)
    if a.ndim == 2:
        return np.repeat(a[:, :, None], 3, axis=2)
    return a


def write_image(path, array):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError(f"expected uint8 image data, got {a.dtype}")
    if a.ndim == 2:
        img = Image.fromarray(a, mode="L")
    elif a.ndim == 3 and a.shape[2] == 3:
        img = Image.fromarray(a, mode="RGB")
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {a.shape}")
    try:
        img.save(path, format="PNG")
    except OSError as e:
        raise FileError(f"cannot write {path}: {e}") from e


def write_mask(path, mask):
    write_image(path, mask.bits * np.uint8(255))


def read_mask(path):
    a = read_gray(path)
    if not np.all((a == 0) | (a == 255)):
        raise ValueError(f"mask {path} must contain only 0 and 255 pixels")
    return Mask((a // 255).astype(np.uint8))
