"""Binary masks: centered square holes, brush-stroke irregular holes, and
classification of masks by missing-area ratio.

Convention: 1 marks the known region, 0 the missing region. Images fed to
the networks carry white (255) in the missing region before normalization.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mask:
    """Binary per-pixel map; 1 = known, 0 = missing. At least one known pixel."""

    bits: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.bits)
        if a.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("mask values must be strictly binary")
        a = a.astype(np.uint8)
        if not a.any():
            raise ValueError("mask must keep at least one known pixel")
        object.__setattr__(self, "bits", a)

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def missing_count(self):
        return int(self.bits.size - self.bits.sum())


@dataclass(frozen=True)
class RatioBucket:
    """Half-open band [lower, upper) of missing-area percentages."""

    lower: float
    upper: float

    def __post_init__(self):
        if not 0 <= self.lower < self.upper <= 100:
            raise ValueError(f"bucket requires 0 <= lower < upper <= 100, got {self}")

    def contains(self, percent):
        return self.lower <= percent < self.upper


STANDARD_BUCKETS = (
    RatioBucket(10, 20),
    RatioBucket(20, 30),
    RatioBucket(30, 40),
    RatioBucket(40, 50),
)


def centering_mask(height, width, side):
    """Square hole of the given side centered in a known field; ties toward top-left."""
    if side > min(height, width):
        raise ValueError(f"hole side {side} exceeds image extents {height}x{width}")
    if side < 1:
        raise ValueError(f"hole side must be positive, got {side}")
    bits = np.ones((height, width), dtype=np.uint8)
    top = (height - side) // 2
    left = (width - side) // 2
    bits[top : top + side, left : left + side] = 0
    return Mask(bits)


def missing_ratio(mask):
    """Missing fraction and its standard decile band (None when outside all bands)."""
    frac = mask.missing_count() / mask.bits.size
    pct = 100.0 * frac
    for bucket in STANDARD_BUCKETS:
        if bucket.contains(pct):
            return frac, bucket
    return frac, None


def _paint_disk(missing, cy, cx, radius):
    h, w = missing.shape
    y0 = max(0, int(np.floor(cy - radius)))
    y1 = min(h, int(np.ceil(cy + radius)) + 1)
    x0 = max(0, int(np.floor(cx - radius)))
    x1 = min(w, int(np.ceil(cx + radius)) + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy = np.arange(y0, y1, dtype=np.float64)[:, None]
    xx = np.arange(x0, x1, dtype=np.float64)[None, :]
    missing[y0:y1, x0:x1] |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius


def _paint_stroke(missing, rng):
    """One random-walk brush stroke; geometry scales with image size (reference 256)."""
    h, w = missing.shape
    scale = min(h, w) / 256.0
    n_vertices = int(rng.integers(10, 41))
    radius = max(1.0, rng.uniform(4.0, 18.0) * scale / 2.0)
    y = rng.uniform(0, h)
    x = rng.uniform(0, w)
    angle = rng.uniform(0, 2 * np.pi)
    _paint_disk(missing, y, x, radius)
    for _ in range(n_vertices - 1):
        angle += rng.uniform(-np.pi / 2, np.pi / 2)
        step = rng.uniform(10.0, 30.0) * scale
        ny = float(np.clip(y + step * np.sin(angle), 0, h - 1))
        nx = float(np.clip(x + step * np.cos(angle), 0, w - 1))
        length = float(np.hypot(ny - y, nx - x))
        for t in np.linspace(0.0, 1.0, max(2, int(length / max(radius * 0.5, 1.0)) + 2)):
            _paint_disk(missing, y + t * (ny - y), x + t * (nx - x), radius)
        y, x = ny, nx


def irregular_mask(height, width, seed, bucket, max_attempts=200):
    """Brush-stroke mask whose missing ratio lands inside the bucket.

    Deterministic in (height, width, seed, bucket): strokes are added one at
    a time and the attempt restarts on overshoot, all driven by one seeded
    generator.
    """
    if bucket.upper > 50:
        raise ValueError(f"irregular masks cover at most 50% missing, got bucket {bucket}")
    rng = np.random.default_rng(
        (0x1BB, int(seed), height, width, int(bucket.lower * 100), int(bucket.upper * 100))
    )
    total = height * width
    for _ in range(max_attempts):
        missing = np.zeros((height, width), dtype=bool)
        max_strokes = int(rng.integers(4, 13))
        for _ in range(max_strokes):
            _paint_stroke(missing, rng)
            pct = 100.0 * missing.sum() / total
            if bucket.contains(pct):
                return Mask(1 - missing.astype(np.uint8))
            if pct >= bucket.upper:
                break
    raise RuntimeError(
        f"could not reach bucket {bucket.lower}-{bucket.upper}% after {max_attempts} attempts"
    )


def white_fill(image, mask):
    """Copy of an 8-bit image with the missing region set to white (255)."""
    out = np.asarray(image).copy()
    hole = mask.bits == 0
    out[hole] = 255
    return out
