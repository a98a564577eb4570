"""Classifier-free training of the conditional denoiser."""

from typing import List, Optional, Tuple

import numpy as np

from diffusion.denoiser import ConditionalDenoiser, DenoiserArch, Params, denoiser_forward
from diffusion.schedule import NoiseSchedule, forward_sample
from numerics import ops
from numerics.optim import Adam
from numerics.rng import RngState
from numerics.tensor import Tape, Tensor
from shared.errors import ActGenError, ShapeError
from shared.log import log


def condition_table(params: Params) -> Tensor:
    """Class embeddings with the null token appended as the last row."""
    null = ops.reshape(params["null_emb"], (1, params["null_emb"].shape[0]))
    return ops.concat([params["class_emb"], null], axis=0)


def denoiser_loss(
    params: Params,
    arch: DenoiserArch,
    x0: np.ndarray,
    labels: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    drop: np.ndarray,
    sched: NoiseSchedule,
    masks: Optional[np.ndarray] = None,
    attn_weight: float = 0.0,
) -> Tensor:
    """Mean squared error between predicted and true noise on one batch.

    ``drop`` marks samples whose condition is replaced by the null token. With
    ``masks`` (N, 1, H, W) and a positive ``attn_weight``, the squared error
    between the class-token attention map and the foreground mask is added.
    """
    if x0.shape != eps.shape or x0.shape[0] != labels.shape[0]:
        raise ShapeError("denoiser_loss", x0.shape, eps.shape)
    x_t = forward_sample(Tensor(x0), t, Tensor(eps), sched)
    ids = np.where(drop, arch.num_classes, labels).astype(np.int64)
    cond_vecs = ops.index(condition_table(params), ids)
    eps_hat, attn = denoiser_forward(params, arch, x_t, cond_vecs, t)
    diff = ops.sub(eps_hat, Tensor(eps))
    loss = ops.mean(ops.mul(diff, diff))
    if masks is None or attn_weight == 0.0:
        return loss
    if masks.shape != attn.shape:
        raise ShapeError("denoiser_loss", masks.shape, attn.shape, "foreground masks")
    miss = ops.sub(attn, Tensor(masks))
    return ops.add(loss, ops.scale(ops.mean(ops.mul(miss, miss)), attn_weight))


def train_denoiser(
    denoiser: ConditionalDenoiser,
    images: np.ndarray,
    labels: np.ndarray,
    sched: NoiseSchedule,
    epochs: int,
    drop_cond_prob: float,
    rng: RngState,
    batch_size: int = 64,
    lr: float = 2e-3,
    masks: Optional[np.ndarray] = None,
    attn_weight: float = 0.0,
) -> Tuple[ConditionalDenoiser, List[float]]:
    """Minimise ||eps_theta(x_t, c, t) - eps||^2 with t ~ U[1, T].

    Foreground ``masks`` aligned with ``images`` also train the attention map
    when ``attn_weight`` is positive.

    Returns the trained model and the mean loss of each epoch.
    """
    if len(images) == 0:
        raise ActGenError("train_denoiser: empty dataset")
    if not (0.0 <= drop_cond_prob <= 1.0):
        raise ActGenError(f"drop_cond_prob must be in [0, 1], got {drop_cond_prob}")
    if masks is not None and len(masks) != len(images):
        raise ShapeError("train_denoiser", masks.shape, images.shape, "one mask per image")

    params = dict(denoiser.params)
    arch = denoiser.arch
    optimizer = Adam()
    history: List[float] = []
    n = len(images)

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            t = rng.integers(1, sched.T + 1, size=len(idx))
            eps = rng.standard_normal(images[idx].shape)
            drop = rng.random(len(idx)) < drop_cond_prob

            with Tape() as tape:
                tape.watch_all(params.values())
                batch_masks = None if masks is None else masks[idx]
                loss = denoiser_loss(
                    params, arch, images[idx], labels[idx], t, eps, drop, sched, batch_masks, attn_weight
                )
            grads = tape.backward(loss)
            params = optimizer.step(params, grads, lr)
            losses.append(loss.item())

        history.append(float(np.mean(losses)))
        log("Denoiser", f"epoch {epoch + 1}/{epochs} loss={history[-1]:.5f}")

    return ConditionalDenoiser(params, arch), history
