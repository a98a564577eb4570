"""Lineage of generated samples and hard-sample mining counts."""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import pandas as pd

LINEAGE_COLUMNS = ["gen_id", "epoch", "guide_index", "class", "adversarial_flag", "final_l_contra", "final_l_adv"]
MINING_COLUMNS = ["val_index", "label", "times_mined", "first_epoch", "last_epoch"]


@dataclass
class LineageRecord:
    gen_id: int
    epoch: int
    guide_index: int  # position in the validation split
    label: int
    adversarial_flag: bool
    final_l_contra: float
    final_l_adv: float

    def to_dict(self) -> Dict[str, Any]:
        row = asdict(self)
        row["class"] = row.pop("label")
        return row


class LineageRecorder:
    """Tracks where every generated sample came from and how often guides get mined."""

    def __init__(self, out_dir: Optional[Union[str, Path]] = None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.records: List[LineageRecord] = []
        self.mining: Dict[int, Dict[str, int]] = {}
        self.mined_by_epoch: Dict[int, List[int]] = {}

    def record_mined(self, epoch: int, indices: Sequence[int], labels: Sequence[int]) -> None:
        self.mined_by_epoch[epoch] = [int(i) for i in indices]
        for idx, label in zip(indices, labels):
            entry = self.mining.setdefault(
                int(idx), {"label": int(label), "times_mined": 0, "first_epoch": epoch, "last_epoch": epoch}
            )
            entry["times_mined"] += 1
            entry["last_epoch"] = epoch

    def record_generation(self, record: LineageRecord) -> None:
        self.records.append(record)

    @property
    def n_generated(self) -> int:
        return len(self.records)

    @property
    def n_adversarial(self) -> int:
        return sum(1 for r in self.records if r.adversarial_flag)

    def lineage_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.records], columns=LINEAGE_COLUMNS)

    def mining_frame(self) -> pd.DataFrame:
        rows = [{"val_index": idx, **entry} for idx, entry in sorted(self.mining.items())]
        return pd.DataFrame(rows, columns=MINING_COLUMNS)

    def flush(self) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.lineage_frame().to_csv(self.out_dir / "lineage.csv", index=False, float_format="%.10g")
        self.mining_frame().to_csv(self.out_dir / "mining_counts.csv", index=False)

    def to_state(self) -> Dict[str, Any]:
        return {
            "records": [asdict(r) for r in self.records],
            "mining": {str(k): v for k, v in self.mining.items()},
            "mined_by_epoch": {str(k): v for k, v in self.mined_by_epoch.items()},
        }

    def restore(self, state: Dict[str, Any]) -> None:
        self.records = [LineageRecord(**r) for r in state.get("records", [])]
        self.mining = {int(k): v for k, v in state.get("mining", {}).items()}
        self.mined_by_epoch = {int(k): v for k, v in state.get("mined_by_epoch", {}).items()}
