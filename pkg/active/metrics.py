"""
Per-epoch metrics of an active training run.

Rows accumulate in memory and are flushed to ``metrics.csv`` after every
epoch, so an interrupted run leaves a consistent file behind. Wall-clock
timings live in a separate ``timings.csv`` and survive a resume; ``metrics.csv``
only carries the cumulative run time when ``experiment.record_wall_time`` is
set, keeping same-seed runs byte-identical.
"""

import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

METRICS_COLUMNS = ["epoch", "train_loss", "val_acc", "test_acc", "n_generated_cum", "n_adversarial_cum", "wall_seconds"]
TIMING_COLUMNS = ["epoch", "phase", "seconds"]

FLOAT_FORMAT = "%.10g"


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    val_acc: float
    test_acc: float
    n_generated_cum: int
    n_adversarial_cum: int
    wall_seconds: float = 0.0

    def to_dict(self) -> Dict:
        return asdict(self)


class MetricsRecorder:
    """Collects metrics rows and phase timings for one run."""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None, record_wall_time: bool = False):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.record_wall_time = record_wall_time
        self.rows: List[MetricsRow] = []
        self.timings: List[Dict] = []
        self._phase_start: Dict[str, float] = {}
        self._epoch_start = time.perf_counter()

    def start_epoch(self) -> None:
        self._epoch_start = time.perf_counter()

    def start(self, phase: str) -> None:
        self._phase_start[phase] = time.perf_counter()

    def stop(self, epoch: int, phase: str) -> float:
        seconds = time.perf_counter() - self._phase_start.pop(phase, time.perf_counter())
        self.timings.append({"epoch": epoch, "phase": phase, "seconds": seconds})
        return seconds

    def record(self, row: MetricsRow) -> MetricsRow:
        elapsed = time.perf_counter() - self._epoch_start
        self.timings.append({"epoch": row.epoch, "phase": "epoch", "seconds": elapsed})
        row.wall_seconds = self.wall_seconds if self.record_wall_time else 0.0
        self.rows.append(row)
        return row

    @property
    def wall_seconds(self) -> float:
        """Run time so far, summed over every finished epoch including earlier sessions."""
        return float(sum(t["seconds"] for t in self.timings if t["phase"] == "epoch"))

    @property
    def last(self) -> Optional[MetricsRow]:
        return self.rows[-1] if self.rows else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=METRICS_COLUMNS)

    def flush(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(self.out_dir / "metrics.csv", index=False, float_format=FLOAT_FORMAT)
        pd.DataFrame(self.timings, columns=TIMING_COLUMNS).to_csv(
            self.out_dir / "timings.csv", index=False, float_format=FLOAT_FORMAT
        )

    def to_state(self) -> Dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows], "timings": [dict(t) for t in self.timings]}

    def restore(self, state: Dict[str, Any]) -> None:
        self.rows = [MetricsRow(**r) for r in state.get("rows", [])]
        self.timings = [dict(t) for t in state.get("timings", [])]
