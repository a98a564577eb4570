"""
Tiny class-conditional noise-prediction network.

    x_t ─ conv_in ─(+ time emb + cond emb)─ gelu ─ conv_mid ─ gelu ─┐
                                                                     │
        cross-attention: queries from pixels, keys/values from       │
        [cond token, learned register token]  ──────────── residual ─┴─ conv_out ─ eps_hat

The attention map handed to guidance is, per pixel, the softmax weight the
pixel puts on the condition token, averaged over heads. Values lie in (0, 1)
and the map is produced at full resolution, so no upsampling is needed.
Training can supervise it with the dataset's foreground masks
(``diffusion.attn_weight``); without that it carries little spatial signal.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from numerics import ops
from numerics.rng import RngState
from numerics.tensor import Tensor
from shared.errors import ShapeError

Params = Dict[str, Tensor]


class DenoiserArch(BaseModel):
    """Shape-determining hyperparameters, stored alongside the weights."""

    model_config = ConfigDict(frozen=True)

    image_channels: int = 1
    image_size: int = 16
    num_classes: int = 4
    embed_dim: int = 32
    channels: int = 32
    heads: int = 2
    time_dim: int = 32

    @property
    def head_dim(self) -> int:
        return max(self.channels // self.heads, 1)


@dataclass(frozen=True)
class ConditionEmbedding:
    """Condition vector c (or the unconditional token when ``null_flag``)."""

    class_id: Optional[int]
    vec: Tensor
    null_flag: bool = False

    def replace_vec(self, vec: Tensor) -> "ConditionEmbedding":
        return ConditionEmbedding(class_id=self.class_id, vec=vec, null_flag=self.null_flag)


def init_params(arch: DenoiserArch, rng: RngState) -> Params:
    F, D, C = arch.channels, arch.embed_dim, arch.image_channels
    inner = arch.heads * arch.head_dim

    def normal(shape, fan_in):
        return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in))

    return {
        "class_emb": normal((arch.num_classes, D), 1.0),
        "null_emb": Tensor(np.zeros(D)),
        "time_w1": normal((arch.time_dim, F), arch.time_dim),
        "time_b1": Tensor(np.zeros(F)),
        "time_w2": normal((F, F), F),
        "time_b2": Tensor(np.zeros(F)),
        "cond_w": normal((D, F), D),
        "cond_b": Tensor(np.zeros(F)),
        "conv_in_w": normal((F, C, 3, 3), 9 * C),
        "conv_in_b": Tensor(np.zeros(F)),
        "conv_mid_w": normal((F, F, 3, 3), 9 * F),
        "conv_mid_b": Tensor(np.zeros(F)),
        "attn_q": normal((F, inner), F),
        "attn_k": normal((D, inner), D),
        "attn_v": normal((D, inner), D),
        "attn_reg": normal((D,), 1.0),
        "attn_o": normal((inner, F), inner),
        "attn_o_b": Tensor(np.zeros(F)),
        "conv_out_w": Tensor(0.1 * rng.standard_normal((C, F, 3, 3)) / np.sqrt(9 * F)),
        "conv_out_b": Tensor(np.zeros(C)),
    }


def timestep_embedding(t: np.ndarray, dim: int) -> Tensor:
    """Sinusoidal embedding of integer timesteps, shape (N, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return Tensor(np.concatenate([np.sin(angles), np.cos(angles)], axis=1))


def denoiser_forward(
    params: Params, arch: DenoiserArch, x: Tensor, cond_vecs: Tensor, t: np.ndarray
) -> Tuple[Tensor, Tensor]:
    """Batched forward: x (N, C, H, W), cond_vecs (N, D), t (N,) -> (eps_hat, attn (N, 1, H, W))."""
    n, c, h, w = x.shape
    D, F, heads, dk = arch.embed_dim, arch.channels, arch.heads, arch.head_dim
    if cond_vecs.shape != (n, D):
        raise ShapeError("denoiser", cond_vecs.shape, (n, D), "condition embedding size")
    if c != arch.image_channels:
        raise ShapeError("denoiser", x.shape, (n, arch.image_channels, h, w), "image channels")

    temb = timestep_embedding(t, arch.time_dim)
    temb = ops.linear(ops.gelu(ops.linear(temb, params["time_w1"], params["time_b1"])), params["time_w2"], params["time_b2"])
    cemb = ops.linear(cond_vecs, params["cond_w"], params["cond_b"])

    feat = ops.conv2d(x, params["conv_in_w"], params["conv_in_b"])
    feat = ops.gelu(ops.broadcast_channels(feat, ops.add(temb, cemb)))
    feat = ops.gelu(ops.conv2d(feat, params["conv_mid_w"], params["conv_mid_b"]))

    # cross-attention over two tokens: the condition and a learned register
    pixels = ops.reshape(ops.transpose(feat, (0, 2, 3, 1)), (n, h * w, F))
    reg = ops.matmul(Tensor(np.ones((n, 1))), ops.reshape(params["attn_reg"], (1, D)))
    tokens = ops.concat([ops.reshape(cond_vecs, (n, 1, D)), ops.reshape(reg, (n, 1, D))], axis=1)
    q = ops.matmul(pixels, params["attn_q"])
    k = ops.matmul(tokens, params["attn_k"])
    v = ops.matmul(tokens, params["attn_v"])

    head_out = []
    cls_maps = []
    for hd in range(heads):
        cols = (slice(None), slice(None), slice(hd * dk, (hd + 1) * dk))
        scores = ops.scale(ops.bmm(q[cols], ops.transpose(k[cols], (0, 2, 1))), 1.0 / np.sqrt(dk))
        probs = ops.softmax(scores, axis=-1)
        head_out.append(ops.bmm(probs, v[cols]))
        cls_maps.append(probs[:, :, 0])

    mixed = ops.linear(ops.concat(head_out, axis=2), params["attn_o"], params["attn_o_b"])
    feat = ops.add(feat, ops.transpose(ops.reshape(mixed, (n, h, w, F)), (0, 3, 1, 2)))
    eps = ops.conv2d(feat, params["conv_out_w"], params["conv_out_b"])
    attn = ops.scale(ops.sum(ops.concat([ops.reshape(m, (n, 1, h * w)) for m in cls_maps], axis=1), axis=1), 1.0 / heads)
    return eps, ops.reshape(attn, (n, 1, h, w))


class ConditionalDenoiser:
    """Parameters plus architecture; the model behind eps_theta(x_t, c, t)."""

    def __init__(self, params: Params, arch: DenoiserArch):
        self.params = params
        self.arch = arch

    @classmethod
    def create(cls, arch: DenoiserArch, rng: RngState) -> "ConditionalDenoiser":
        return cls(init_params(arch, rng), arch)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return (self.arch.image_channels, self.arch.image_size, self.arch.image_size)

    def embed_class(self, y: Optional[int]) -> ConditionEmbedding:
        """Fresh copy of the class embedding, or the null token for ``None``."""
        if y is None:
            return ConditionEmbedding(class_id=None, vec=Tensor(self.params["null_emb"].numpy()), null_flag=True)
        if not (0 <= int(y) < self.arch.num_classes):
            raise ShapeError("embed_class", (int(y),), (self.arch.num_classes,), "label out of range")
        return ConditionEmbedding(class_id=int(y), vec=Tensor(self.params["class_emb"].data[int(y)].copy()))

    def predict_noise(self, x_t: Tensor, cond: ConditionEmbedding, t: int) -> Tuple[Tensor, Tensor]:
        """Single-sample eps_hat (C, H, W) and attention map (1, H, W).

        Differentiable with respect to ``cond.vec`` when a tape watches it.
        """
        if x_t.shape != self.image_shape:
            raise ShapeError("predict_noise", x_t.shape, self.image_shape)
        if cond.vec.shape != (self.arch.embed_dim,):
            raise ShapeError("predict_noise", cond.vec.shape, (self.arch.embed_dim,), "embedding size")
        eps, attn = denoiser_forward(
            self.params,
            self.arch,
            ops.reshape(x_t, (1,) + x_t.shape),
            ops.reshape(cond.vec, (1, self.arch.embed_dim)),
            np.array([t]),
        )
        return ops.reshape(eps, x_t.shape), ops.reshape(attn, (1,) + x_t.shape[1:])

    def __call__(self, x_t: Tensor, cond: ConditionEmbedding, t: int) -> Tuple[Tensor, Tensor]:
        return self.predict_noise(x_t, cond, t)


def predict_noise(
    denoiser: ConditionalDenoiser, x_t: Tensor, cond: ConditionEmbedding, t: int
) -> Tuple[Tensor, Tensor]:
    return denoiser.predict_noise(x_t, cond, t)


def embed_class(denoiser: ConditionalDenoiser, y: Optional[int]) -> ConditionEmbedding:
    return denoiser.embed_class(y)
