"""Per-step event log of a guided generation.

One row per reverse step; rows of many generations are merged by the caller
(with a ``gen_id`` column) before being written as CSV.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

EVENT_COLUMNS = ["step", "gamma", "mask_mean", "l_contra", "l_adv", "grad_norm", "skipped_update"]

NAN = float("nan")


@dataclass
class StepEvent:
    step: int
    gamma: float
    mask_mean: float = NAN
    l_contra: float = NAN
    l_adv: float = NAN
    grad_norm: float = NAN
    skipped_update: bool = False


@dataclass
class GenerationEvents:
    rows: List[StepEvent] = field(default_factory=list)

    def append(self, event: StepEvent) -> None:
        self.rows.append(event)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def skipped_updates(self) -> int:
        return sum(1 for r in self.rows if r.skipped_update)

    def _last(self, name: str) -> float:
        for row in reversed(self.rows):
            value = getattr(row, name)
            if value == value:  # not NaN
                return value
        return NAN

    @property
    def final_l_contra(self) -> float:
        return self._last("l_contra")

    @property
    def final_l_adv(self) -> float:
        return self._last("l_adv")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=EVENT_COLUMNS)


def merge_events(per_generation: Sequence[GenerationEvents], first_gen_id: int = 0) -> pd.DataFrame:
    frames = []
    for offset, events in enumerate(per_generation):
        frame = events.to_frame()
        frame.insert(0, "gen_id", first_gen_id + offset)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["gen_id"] + EVENT_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def write_events_csv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g")
