"""
Synthetic shapes dataset with ground-truth foreground masks.

Four classes, rendered at pixel centres:

    0 disk      |p| <= r
    1 square    half side 0.8 r
    2 triangle  equilateral, circumradius r, apex up
    3 cross     two bars of half width 0.35 r and half length r

r = base_scale * image_size * (1 + U(-scale_jitter, scale_jitter)) and the
centre moves by U(-position_jitter, position_jitter) pixels per axis. Every
sample gets its own background (gradient ramp, noise texture or flat) so
the object, not the backdrop, carries the label.
"""

from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np

from numerics.rng import make_rng
from numerics.tensor import Tensor
from shared.config import ShapeDatasetSpec
from shared.errors import DataSpecError
from shared.log import log

CLASS_NAMES = ("disk", "square", "triangle", "cross")

SQUARE_HALF = 0.8
CROSS_HALF_WIDTH = 0.35

# analytic area / r^2, used by tests and the demo report
AREA_FACTORS = {
    "disk": np.pi,
    "square": (2 * SQUARE_HALF) ** 2,
    "triangle": 3.0 * np.sqrt(3.0) / 4.0,
    "cross": 2 * (2 * CROSS_HALF_WIDTH) * 2 - (2 * CROSS_HALF_WIDTH) ** 2,
}

_TRIANGLE_NORMALS = [(np.cos(a), np.sin(a)) for a in np.deg2rad([90.0, 210.0, 330.0])]


@dataclass(frozen=True)
class Sample:
    image: Tensor  # (C, H, W)
    label: int
    gt_mask: Tensor  # (1, H, W), 1 on shape interior


@dataclass
class ShapeDataset:
    """Column storage of samples; ``masks`` hold exact 0/1 values."""

    spec: ShapeDatasetSpec
    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    masks: np.ndarray  # (N, 1, H, W) float64

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(Tensor(self.images[i]), int(self.labels[i]), Tensor(self.masks[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: Sequence[int]) -> "ShapeDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ShapeDataset(self.spec, self.images[idx], self.labels[idx], self.masks[idx])

    def class_counts(self) -> List[int]:
        return [int((self.labels == c).sum()) for c in range(self.spec.num_classes)]


def validate_spec(spec: ShapeDatasetSpec) -> None:
    """Reject specs whose largest shape could leave the frame."""
    r_max = spec.base_scale * spec.image_size * (1.0 + spec.scale_jitter)
    if r_max + spec.position_jitter > spec.image_size / 2.0:
        raise DataSpecError(
            f"shape extent {r_max:.2f} + position jitter {spec.position_jitter} exceeds half the frame "
            f"({spec.image_size / 2.0}); lower data.base_scale, data.scale_jitter or data.position_jitter"
        )
    if spec.base_scale * spec.image_size * (1.0 - spec.scale_jitter) < 1.0:
        raise DataSpecError("shapes would be smaller than one pixel; raise data.base_scale")


def shape_mask(kind: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean (size, size) interior mask sampled at pixel centres."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    if kind == "disk":
        return dx * dx + dy * dy <= r * r
    if kind == "square":
        half = SQUARE_HALF * r
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if kind == "triangle":
        inside = np.ones((size, size), dtype=bool)
        for nx, ny in _TRIANGLE_NORMALS:
            inside &= dx * nx + dy * ny <= r / 2.0
        return inside
    if kind == "cross":
        w = CROSS_HALF_WIDTH * r
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    raise DataSpecError(f"unknown shape kind {kind!r}")


def _background(spec: ShapeDatasetSpec, rng: np.random.Generator, level: float) -> np.ndarray:
    size = spec.image_size
    kind = spec.background
    if kind == "mixed":
        kind = ("gradient", "noise", "flat")[rng.integers(0, 3)]
    field = np.full((size, size), level)
    if kind == "gradient":
        angle = rng.uniform(0.0, 2.0 * np.pi)
        ramp = np.linspace(-1.0, 1.0, size)
        yy, xx = np.meshgrid(ramp, ramp, indexing="ij")
        field += rng.uniform(0.1, 0.4) * (np.cos(angle) * xx + np.sin(angle) * yy)
        field += 0.2 * spec.noise_level * rng.standard_normal((size, size))
    elif kind == "noise":
        field += spec.noise_level * rng.standard_normal((size, size))
    return field


def render_sample(spec: ShapeDatasetSpec, label: int, rng: np.random.Generator):
    """One (image, mask) pair of class ``label``."""
    size = spec.image_size
    r = spec.base_scale * size * (1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter))
    centre = (size - 1) / 2.0
    cx = centre + rng.uniform(-spec.position_jitter, spec.position_jitter)
    cy = centre + rng.uniform(-spec.position_jitter, spec.position_jitter)
    mask = shape_mask(CLASS_NAMES[label], size, cx, cy, r)

    level = rng.uniform(-0.4, 0.4)
    fg = (0.8 if level < 0.0 else -0.8) + rng.uniform(-0.1, 0.1)
    bg = _background(spec, rng, level)
    fg_tint = rng.uniform(0.6, 1.0, size=spec.channels) if spec.channels == 3 else np.ones(1)
    bg_tint = rng.uniform(0.6, 1.0, size=spec.channels) if spec.channels == 3 else np.ones(1)

    image = np.where(mask[None], fg * fg_tint[:, None, None], bg[None] * bg_tint[:, None, None])
    image = image + 0.05 * spec.noise_level * rng.standard_normal(image.shape)
    return np.clip(image, -1.0, 1.0), mask[None].astype(np.float64)


def generate_shapes_dataset(spec: ShapeDatasetSpec) -> ShapeDataset:
    """Deterministic, class-balanced dataset; samples ordered by class."""
    validate_spec(spec)
    rng = make_rng(spec.seed, "data")
    n = spec.num_classes * spec.samples_per_class
    size, c = spec.image_size, spec.channels
    images = np.zeros((n, c, size, size))
    masks = np.zeros((n, 1, size, size))
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), spec.samples_per_class)
    for i, label in enumerate(labels):
        images[i], masks[i] = render_sample(spec, int(label), rng)
    log("Shapes", f"rendered {n} samples ({spec.num_classes} classes, {c}x{size}x{size})")
    return ShapeDataset(spec, images, labels, masks)
