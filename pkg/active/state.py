"""Resumable state of an active training run, saved after every epoch."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from classifier.model import ClassifierArch, ConvClassifier
from guidance.memory_bank import MemoryBank
from numerics.optim import MomentumSGD
from numerics.tensor import Tensor
from shapes.checkpoint import load_checkpoint, save_checkpoint
from shared.errors import CheckpointError

STATE_FILE = "state.ckpt"
STATE_VERSION = 2


@dataclass
class TrainState:
    """Everything needed to continue at ``epoch``.

    The real part of the training set is rebuilt from the dataset; only
    generated samples are stored here.
    """

    epoch: int
    classifier: ConvClassifier
    optimizer: MomentumSGD
    bank: MemoryBank
    gen_images: np.ndarray  # (M, C, H, W)
    gen_labels: np.ndarray  # (M,)
    lineage: Dict[str, Any] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    config_text: str = ""

    @property
    def n_generated(self) -> int:
        return len(self.gen_labels)


def save_state(directory: Union[str, Path], state: TrainState) -> Path:
    arrays = {f"clf/{k}": v.data for k, v in state.classifier.params.items()}
    arrays.update(state.optimizer.state_arrays())
    arrays.update(state.bank.to_arrays())
    arrays["gen/images"] = state.gen_images
    arrays["gen/labels"] = state.gen_labels.astype(np.float64)
    meta = {
        "kind": "train_state",
        "state_version": STATE_VERSION,
        "epoch": state.epoch,
        "classifier_arch": state.classifier.arch.model_dump(),
        "momentum": state.optimizer.momentum,
        "weight_decay": state.optimizer.weight_decay,
        "bank_capacity": state.bank.capacity,
        "lineage": state.lineage,
        "metrics": state.metrics,
        "config": state.config_text,
    }
    path = Path(directory) / STATE_FILE
    save_checkpoint(path, arrays, meta)
    return path


def load_state(directory: Union[str, Path]) -> TrainState:
    path = Path(directory) / STATE_FILE
    if not path.exists():
        raise CheckpointError(f"no resumable state at {path}")
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "train_state" or meta.get("state_version") != STATE_VERSION:
        raise CheckpointError(f"{path} is not a train state of version {STATE_VERSION}")

    params = {k.split("/", 1)[1]: Tensor(v) for k, v in arrays.items() if k.startswith("clf/")}
    classifier = ConvClassifier(params, ClassifierArch(**meta["classifier_arch"]))
    optimizer = MomentumSGD(meta["momentum"], meta["weight_decay"])
    optimizer.load_state_arrays(arrays)
    bank = MemoryBank.from_arrays(arrays, capacity=meta["bank_capacity"])
    return TrainState(
        epoch=int(meta["epoch"]),
        classifier=classifier,
        optimizer=optimizer,
        bank=bank,
        gen_images=arrays["gen/images"],
        gen_labels=arrays["gen/labels"].astype(np.int64),
        lineage=meta["lineage"],
        metrics=meta["metrics"],
        config_text=meta["config"],
    )


def find_state(directory: Union[str, Path]) -> Optional[Path]:
    path = Path(directory) / STATE_FILE
    return path if path.exists() else None
