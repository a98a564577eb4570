"""Minibatch training of the classifier with momentum SGD."""

from typing import Optional, Tuple

import numpy as np

from classifier.model import ConvClassifier, Params, classifier_logits
from numerics import ops
from numerics.optim import MomentumSGD
from numerics.rng import RngState
from numerics.tensor import Tape, Tensor
from shared.errors import ActGenError, ShapeError


def learning_rate(epoch: int, total_epochs: int, base_lr: float, warmup_epochs: int = 1) -> float:
    """Linear warmup then cosine decay to zero over the remaining epochs."""
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / (warmup_epochs + 1)
    span = max(total_epochs - warmup_epochs, 1)
    progress = min((epoch - warmup_epochs) / span, 1.0)
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * progress))


def classifier_loss(params: Params, images: np.ndarray, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of a batch."""
    if len(images) != len(labels):
        raise ShapeError("classifier_loss", images.shape, labels.shape)
    return ops.cross_entropy(classifier_logits(params, Tensor(images)), labels)


def train_classifier_epoch(
    classifier: ConvClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    lr: float,
    rng: RngState,
    optimizer: Optional[MomentumSGD] = None,
    batch_size: int = 32,
) -> Tuple[ConvClassifier, float]:
    """One shuffled pass; returns the updated model and the mean batch loss.

    Real and generated samples carry the same weight.
    """
    if len(images) == 0:
        raise ActGenError("train_classifier_epoch: empty dataset")
    optimizer = optimizer or MomentumSGD()
    params = dict(classifier.params)
    order = rng.permutation(len(images))
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        with Tape() as tape:
            tape.watch_all(params.values())
            loss = classifier_loss(params, images[idx], labels[idx])
        params = optimizer.step(params, tape.backward(loss), lr)
        losses.append(loss.item())
    return ConvClassifier(params, classifier.arch), float(np.mean(losses))
