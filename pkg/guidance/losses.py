"""Gradient guidance: contrastive and adversarial losses, embedding update."""

from typing import List, Protocol, Sequence, Tuple

import numpy as np

from diffusion.denoiser import ConditionEmbedding
from diffusion.schedule import LatentState, NoiseSchedule, x0_estimate
from numerics import ops
from numerics.tensor import Tensor
from shared.errors import GuidanceError, ShapeError

ZERO_GRAD_EPS = 1e-12


class LogitModel(Protocol):
    num_classes: int

    def logits(self, x: Tensor) -> Tensor: ...


def contrastive_loss(x: Tensor, bank_entries: Sequence[Tensor], rho: float) -> Tensor:
    """(1/N) sum_i max(rho - ||x - B_i||, 0) over flattened latents.

    An empty bank gives a constant zero.
    """
    if not bank_entries:
        return Tensor(0.0)
    d = x.size
    for entry in bank_entries:
        if entry.size != d:
            raise ShapeError("contrastive_loss", (d,), (entry.size,), "bank entry length")
    n = len(bank_entries)
    bank = Tensor(np.stack([e.data.reshape(-1) for e in bank_entries]))
    tiled = ops.matmul(Tensor(np.ones((n, 1))), ops.reshape(x, (1, d)))
    diff = ops.sub(tiled, bank)
    dist = ops.sqrt(ops.sum(ops.mul(diff, diff), axis=1))
    return ops.mean(ops.relu(ops.sub(Tensor(float(rho)), dist)))


def adversarial_loss(
    state: LatentState, eps_hat: Tensor, sched: NoiseSchedule, classifier: LogitModel, y: int
) -> Tensor:
    """-CE(classifier(x0_hat), y); ascending it makes the decoded image harder."""
    if not (0 <= int(y) < classifier.num_classes):
        raise GuidanceError(f"label {y} outside [0, {classifier.num_classes})")
    decoded = x0_estimate(state, eps_hat, sched)
    logits = classifier.logits(ops.reshape(decoded, (1,) + decoded.shape))
    return ops.scale(ops.cross_entropy(logits, np.array([int(y)])), -1.0)


def update_embedding(cond: ConditionEmbedding, grad: Tensor, nu: float) -> Tuple[ConditionEmbedding, bool]:
    """c <- c - nu * g / ||g||.  Returns the new embedding and whether it was skipped."""
    if grad.shape != cond.vec.shape:
        raise ShapeError("update_embedding", cond.vec.shape, grad.shape)
    norm = float(np.linalg.norm(grad.data))
    if norm < ZERO_GRAD_EPS:
        return cond, True
    return cond.replace_vec(Tensor(cond.vec.data - nu * (grad.data / norm))), False


def confidence_to_guidance(
    f: float, L: float = 30.0, k: float = 10.0, p: float = 5.0, u: float = 0.5
) -> float:
    """L / (1 + e^(k (f - u))) + p: low confidence asks for stronger guidance."""
    if not (0.0 <= f <= 1.0):
        raise GuidanceError(f"confidence must be in [0, 1], got {f}")
    return float(L / (1.0 + np.exp(k * (f - u))) + p)


def mean_pairwise_distance(latents: List[np.ndarray]) -> float:
    """Mean Euclidean distance over all unordered pairs; 0 for fewer than two."""
    n = len(latents)
    if n < 2:
        return 0.0
    flat = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in latents])
    sq = (flat * flat).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0)
    iu = np.triu_indices(n, k=1)
    return float(np.sqrt(d2[iu]).mean())
