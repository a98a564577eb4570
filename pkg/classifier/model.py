"""
The target classifier: two conv blocks, global average pooling, linear head.

    (C,H,W) -conv3x3-gelu-pool2- (w1,H/2,W/2) -conv3x3-gelu-pool2- (w2,H/4,W/4) -mean- (w2) -linear- logits
"""

from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from numerics import ops
from numerics.rng import RngState
from numerics.tensor import Tensor
from shared.errors import ShapeError

Params = Dict[str, Tensor]


class ClassifierArch(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_channels: int = 1
    image_size: int = 16
    num_classes: int = 4
    width1: int = 32
    width2: int = 64


def init_classifier_params(arch: ClassifierArch, rng: RngState) -> Params:
    c, w1, w2, k = arch.image_channels, arch.width1, arch.width2, arch.num_classes
    return {
        "conv1_w": Tensor(rng.standard_normal((w1, c, 3, 3)) * np.sqrt(2.0 / (9 * c))),
        "conv1_b": Tensor(np.zeros(w1)),
        "conv2_w": Tensor(rng.standard_normal((w2, w1, 3, 3)) * np.sqrt(2.0 / (9 * w1))),
        "conv2_b": Tensor(np.zeros(w2)),
        "fc_w": Tensor(rng.standard_normal((w2, k)) / np.sqrt(w2)),
        "fc_b": Tensor(np.zeros(k)),
    }


def classifier_logits(params: Params, x: Tensor) -> Tensor:
    """Batched logits (N, num_classes) for images (N, C, H, W)."""
    h = ops.avg_pool2(ops.gelu(ops.conv2d(x, params["conv1_w"], params["conv1_b"])))
    h = ops.avg_pool2(ops.gelu(ops.conv2d(h, params["conv2_w"], params["conv2_b"])))
    pooled = ops.mean(h, axis=(2, 3))
    return ops.linear(pooled, params["fc_w"], params["fc_b"])


class ConvClassifier:
    """The model Omega whose mistakes drive generation."""

    def __init__(self, params: Params, arch: ClassifierArch):
        self.params = params
        self.arch = arch

    @classmethod
    def create(cls, arch: ClassifierArch, rng: RngState) -> "ConvClassifier":
        return cls(init_classifier_params(arch, rng), arch)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.arch.image_channels, self.arch.image_size, self.arch.image_size)

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != self.image_shape:
            raise ShapeError("classifier", x.shape, (x.shape[0] if x.ndim else 0,) + self.image_shape)
        return classifier_logits(self.params, x)

    def predict_proba(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Softmax probabilities (N, num_classes); no tape involvement."""
        out = np.zeros((len(images), self.num_classes))
        for start in range(0, len(images), batch_size):
            batch = Tensor(images[start : start + batch_size])
            out[start : start + len(batch.data)] = ops.softmax(self.logits(batch), axis=-1).data
        return out
