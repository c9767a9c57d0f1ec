"""Weak and strong image views with per-sample reproducible randomness.

The weak view is pad-crop-flip; the strong view runs the same pipeline and
then applies two photometric/geometric distortions drawn from a fixed menu.
Every (seed, epoch, sample) triple owns two independent RNG streams, one per
view, so the result is identical no matter how samples are batched, ordered,
or spread across worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

STRONG_OP_NAMES = ("brightness", "contrast", "rotation", "cutout")


@dataclass(frozen=True)
class AugConfig:
    crop_padding: int = 2
    flip_prob: float = 0.5
    strong_ops_per_image: int = 2
    brightness_delta: float = 0.3
    contrast_low: float = 0.6
    contrast_high: float = 1.4
    rotation_max_deg: float = 15.0
    cutout_max_frac: float = 0.25

    def __post_init__(self):
        if self.crop_padding < 0:
            raise ConfigError("crop_padding must be >= 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        if not 1 <= self.strong_ops_per_image <= len(STRONG_OP_NAMES):
            raise ConfigError(
                f"strong_ops_per_image must lie in [1, {len(STRONG_OP_NAMES)}]"
            )
        if self.brightness_delta < 0:
            raise ConfigError("brightness_delta must be >= 0")
        if not 0.0 < self.contrast_low <= self.contrast_high:
            raise ConfigError("contrast range must satisfy 0 < low <= high")
        if self.rotation_max_deg < 0:
            raise ConfigError("rotation_max_deg must be >= 0")
        if not 0.0 <= self.cutout_max_frac <= 1.0:
            raise ConfigError("cutout_max_frac must lie in [0, 1]")


def make_view_rngs(seed: int, epoch: int, sample_index: int):
    """Two generators (weak, strong) owned by this sample at this epoch."""
    root = np.random.SeedSequence(entropy=(seed, epoch, sample_index))
    weak_seq, strong_seq = root.spawn(2)
    return np.random.default_rng(weak_seq), np.random.default_rng(strong_seq)


def weak_augment(image: np.ndarray, rng, config: AugConfig) -> np.ndarray:
    """Reflect-pad, random crop back to size, random horizontal flip."""
    pad = config.crop_padding
    height, width = image.shape
    padded = np.pad(image, pad, mode="reflect") if pad else image
    top = int(rng.integers(0, 2 * pad + 1))
    left = int(rng.integers(0, 2 * pad + 1))
    out = padded[top : top + height, left : left + width]
    if rng.random() < config.flip_prob:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def strong_augment(image: np.ndarray, rng, config: AugConfig) -> np.ndarray:
    """Weak pipeline plus two distinct distortions, clipped back to [0, 1]."""
    out = weak_augment(image, rng, config)
    picks = rng.choice(
        len(STRONG_OP_NAMES), size=config.strong_ops_per_image, replace=False
    )
    for op_index in picks:
        name = STRONG_OP_NAMES[int(op_index)]
        if name == "brightness":
            delta = rng.uniform(-config.brightness_delta, config.brightness_delta)
            out = out + delta
        elif name == "contrast":
            factor = rng.uniform(config.contrast_low, config.contrast_high)
            out = 0.5 + factor * (out - 0.5)
        elif name == "rotation":
            angle = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg)
            out = rotate_bilinear(out, angle)
        else:
            out = _cutout(out, rng, config.cutout_max_frac)
    return np.clip(out, 0.0, 1.0)


def rotate_bilinear(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center, bilinear interpolation, fill 0."""
    height, width = image.shape
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    yy, xx = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    dy, dx = yy - cy, xx - cx
    src_y = cos_t * dy + sin_t * dx + cy
    src_x = -sin_t * dy + cos_t * dx + cx
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    wy = src_y - y0
    wx = src_x - x0
    out = np.zeros_like(image)
    for oy, ox, weight in (
        (0, 0, (1 - wy) * (1 - wx)),
        (0, 1, (1 - wy) * wx),
        (1, 0, wy * (1 - wx)),
        (1, 1, wy * wx),
    ):
        ys, xs = y0 + oy, x0 + ox
        inside = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        values = np.where(inside, image[ys.clip(0, height - 1), xs.clip(0, width - 1)], 0.0)
        out += weight * values
    return out


def _cutout(image: np.ndarray, rng, max_frac: float) -> np.ndarray:
    """Zero a random rectangle covering at most max_frac of the area."""
    height, width = image.shape
    # Capping each side at sqrt(max_frac) of its dimension bounds the area.
    side = math.sqrt(max_frac)
    max_h = max(1, int(height * side))
    max_w = max(1, int(width * side))
    cut_h = int(rng.integers(1, max_h + 1))
    cut_w = int(rng.integers(1, max_w + 1))
    top = int(rng.integers(0, height - cut_h + 1))
    left = int(rng.integers(0, width - cut_w + 1))
    out = image.copy()
    out[top : top + cut_h, left : left + cut_w] = 0.0
    return out


def augment_views(
    batch_images: np.ndarray,
    sample_indices,
    seed: int,
    epoch: int,
    config: AugConfig,
    want_strong=None,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Weak view for every row, strong view where want_strong marks it.

    batch_images is (n, h, w); sample_indices gives each row's position in
    the dataset, which keys its RNG streams.  Rows without a requested
    strong view are left at zero in the returned strong array.  The output
    is bit-identical for any worker count because row i touches only its
    own streams and its own output slices.
    """
    n = batch_images.shape[0]
    sample_indices = np.asarray(sample_indices)
    if want_strong is None:
        want_strong = np.zeros(n, dtype=bool)
    weak = np.zeros_like(batch_images)
    strong = np.zeros_like(batch_images)

    def fill(row_range):
        for row in row_range:
            weak_rng, strong_rng = make_view_rngs(
                seed, epoch, int(sample_indices[row])
            )
            weak[row] = weak_augment(batch_images[row], weak_rng, config)
            if want_strong[row]:
                strong[row] = strong_augment(batch_images[row], strong_rng, config)

    workers = max(1, int(workers))
    if workers == 1 or n <= 1:
        fill(range(n))
    else:
        chunks = np.array_split(np.arange(n), min(workers, n))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, chunks))
    return weak, strong
