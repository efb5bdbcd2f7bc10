"""Local binary pattern extraction and its network input encoding.

Each pixel is labeled with an 8-bit code obtained by thresholding its 8
neighbors against the center: a neighbor strictly greater than the center
contributes a 1 bit. Neighbors are read clockwise from the top-left, with
the first neighbor in the most significant bit. Borders replicate edge
pixels so the code map keeps the image resolution.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

# clockwise from the top-left neighbor; the first entry lands in the MSB
NEIGHBOR_OFFSETS = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
)

BT601_WEIGHTS = (0.299, 0.587, 0.114)


def _as_u8_grid(arr, what):
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        if np.any(a < 0) or np.any(a > 255):
            raise ValueError(f"{what} values must lie in [0, 255]")
        a = a.astype(np.uint8)
    return a


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image, row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", _as_u8_grid(self.pixels, "GrayImage pixels"))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LbpMap:
    """Per-pixel 8-bit local binary pattern codes, same extents as the source."""

    codes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "codes", _as_u8_grid(self.codes, "LbpMap codes"))

    @property
    def height(self):
        return self.codes.shape[0]

    @property
    def width(self):
        return self.codes.shape[1]


def rgb_to_gray(rgb):
    """(H, W, 3) 8-bit RGB -> GrayImage via BT.601 luma, rounded to nearest."""
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB array, got shape {a.shape}")
    r, g, b = BT601_WEIGHTS
    luma = r * a[:, :, 0].astype(np.float64) + g * a[:, :, 1] + b * a[:, :, 2]
    return GrayImage(np.rint(luma).astype(np.uint8))


def extract_lbp(img):
    """Full-resolution LBP map of a grayscale image (replicate border)."""
    h, w = img.height, img.width
    if h < 3 or w < 3:
        raise ValueError(f"LBP extraction needs at least 3x3 pixels, got {h}x{w}")
    center = img.pixels
    padded = np.pad(center, 1, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint8)
    for dy, dx in NEIGHBOR_OFFSETS:
        neighbor = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        codes = (codes << 1) | (neighbor > center).astype(np.uint8)
    return LbpMap(codes)


def encode_plane(lbp_map):
    """LbpMap -> 1x1xHxW tensor with codes mapped affinely from [0,255] to [-1,1]."""
    values = lbp_map.codes.astype(np.float64) * (2.0 / 255.0) - 1.0
    return Tensor(values[None, None])


def decode_plane(plane):
    """Inverse of encode_plane; accepts a Tensor or array shaped 1x1xHxW or HxW."""
    a = plane.data if isinstance(plane, Tensor) else np.asarray(plane)
    a = a.reshape(a.shape[-2], a.shape[-1])
    codes = np.rint((a + 1.0) * (255.0 / 2.0))
    return LbpMap(np.clip(codes, 0, 255).astype(np.uint8))
