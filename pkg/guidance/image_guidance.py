"""
Attentive image guidance.

At every reverse step the freshly sampled x_{t-1} is pulled toward a noised
copy of the real guide image built from the same z:

    x_{t-1}^(g) = x0_guide / sqrt(alpha_t) + sigma_t * z
    x_{t-1}    <- (1 - m*gamma_t) * x_{t-1} + m*gamma_t * x_{t-1}^(g)

gamma_t = 1 / (1 + e^(t - i)) is ~0 while the sample is mostly noise and ~1
near the end, and the mask m keeps the pull on the foreground object.
"""

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from diffusion.schedule import NoiseSchedule
from numerics import ops
from numerics.tensor import Tensor
from shared.errors import GuidanceError, ShapeError

MaskMode = Literal["attention", "ground_truth", "none"]
Sign = Literal["attract", "repel"]

# smooth threshold applied to the min-max normalised attention map
MASK_LOW = 0.3
MASK_WIDTH = 0.4
FLAT_MAP_EPS = 1e-9


def gamma_schedule(t: float, i: float) -> float:
    """1 / (1 + e^(t - i)), evaluated without overflow for any t - i."""
    d = float(t) - float(i)
    if d >= 0.0:
        e = np.exp(-d)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(d)))


def guide_target(x0_guide: Tensor, t: int, z: Tensor, sched: NoiseSchedule) -> Tensor:
    """Guide latent for step t -> t-1, sharing z with the sampler."""
    if x0_guide.shape != z.shape:
        raise ShapeError("guide_target", x0_guide.shape, z.shape)
    sched.check_step(t, low=1)
    return ops.add(ops.scale(x0_guide, 1.0 / np.sqrt(sched.alpha[t])), ops.scale(z, sched.sigma[t]))


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (0.0 <= gamma <= 1.0):
        raise GuidanceError(f"gamma must be in [0, 1], got {gamma}")
    return gamma


def apply_image_guidance(x_prev: Tensor, x_guide_prev: Tensor, gamma: float, sign: Sign = "attract") -> Tensor:
    """Global interpolation toward the guide (``repel`` pushes away instead)."""
    gamma = _check_gamma(gamma)
    if x_prev.shape != x_guide_prev.shape:
        raise ShapeError("apply_image_guidance", x_prev.shape, x_guide_prev.shape)
    if sign == "repel":
        return ops.add(x_prev, ops.scale(ops.sub(x_prev, x_guide_prev), gamma))
    return ops.add(ops.scale(x_prev, 1.0 - gamma), ops.scale(x_guide_prev, gamma))


@dataclass(frozen=True)
class AttentionMask:
    """Foreground weights m in [0, 1], shape (1, H, W)."""

    m: Tensor

    def __post_init__(self):
        if self.m.ndim != 3 or self.m.shape[0] != 1:
            raise ShapeError("AttentionMask", self.m.shape, detail="expected (1, H, W)")
        if self.m.data.min() < 0.0 or self.m.data.max() > 1.0:
            raise GuidanceError("mask entries must lie in [0, 1]")

    @classmethod
    def ones(cls, h: int, w: int) -> "AttentionMask":
        return cls(Tensor(np.ones((1, h, w))))

    @property
    def mean(self) -> float:
        return float(self.m.data.mean())


def apply_attentive_guidance(
    x_prev: Tensor, x_guide_prev: Tensor, gamma: float, mask: AttentionMask, sign: Sign = "attract"
) -> Tensor:
    """Image guidance restricted by a per-pixel mask; m=0 pixels are untouched."""
    gamma = _check_gamma(gamma)
    if x_prev.shape != x_guide_prev.shape:
        raise ShapeError("apply_attentive_guidance", x_prev.shape, x_guide_prev.shape)
    if x_prev.ndim != 3 or mask.m.shape[1:] != x_prev.shape[1:]:
        raise ShapeError("apply_attentive_guidance", x_prev.shape, mask.m.shape, "mask spatial dims")

    w = np.broadcast_to(mask.m.data * gamma, x_prev.shape)
    if sign == "repel":
        return ops.add(x_prev, ops.mul(Tensor(w), ops.sub(x_prev, x_guide_prev)))
    return ops.add(ops.mul(x_prev, Tensor(1.0 - w)), ops.mul(x_guide_prev, Tensor(w)))


def extract_mask(attn: Tensor, mode: MaskMode, gt_mask: Optional[Tensor] = None) -> AttentionMask:
    """Turn a cross-attention map (or a ground-truth mask) into guidance weights."""
    if mode == "none":
        return AttentionMask(Tensor(np.ones(attn.shape)))
    if mode == "ground_truth":
        if gt_mask is None:
            raise GuidanceError("mask_mode=ground_truth needs a ground-truth mask")
        if gt_mask.shape != attn.shape:
            raise ShapeError("extract_mask", gt_mask.shape, attn.shape)
        return AttentionMask(gt_mask)
    if mode != "attention":
        raise GuidanceError(f"unknown mask mode {mode!r}")

    a = attn.data
    lo, hi = a.min(), a.max()
    if hi - lo < FLAT_MAP_EPS:
        return AttentionMask(Tensor(np.ones(a.shape)))
    norm = (a - lo) / (hi - lo)
    return AttentionMask(Tensor(np.clip((norm - MASK_LOW) / MASK_WIDTH, 0.0, 1.0)))


def mask_iou(mask: AttentionMask, gt_mask: Tensor, threshold: float = 0.5) -> float:
    """Foreground IoU after binarising the soft mask at ``threshold``."""
    if mask.m.shape != gt_mask.shape:
        raise ShapeError("mask_iou", mask.m.shape, gt_mask.shape)
    pred = mask.m.data >= threshold
    truth = gt_mask.data >= 0.5
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum() / union)
