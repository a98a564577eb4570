"""Active training: train, validate, mine, generate, extend."""

from active.lineage import LineageRecord, LineageRecorder
from active.loop import (
    ActiveTrainer,
    DataSplits,
    adversarial_probability,
    generation_jobs,
    partition_dataset,
    run_actgen,
    run_baseline,
    split_dataset,
)
from active.metrics import MetricsRecorder, MetricsRow
from active.state import TrainState, load_state, save_state

__all__ = [
    "ActiveTrainer",
    "DataSplits",
    "LineageRecord",
    "LineageRecorder",
    "MetricsRecorder",
    "MetricsRow",
    "TrainState",
    "adversarial_probability",
    "generation_jobs",
    "load_state",
    "partition_dataset",
    "run_actgen",
    "run_baseline",
    "save_state",
    "split_dataset",
]
