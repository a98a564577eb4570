"""Run manifest: written first into every run directory."""

import json
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

import pytz
from pydantic import BaseModel, Field

from shapes import checkpoint, storage
from shared.config import ExperimentConfig

MANIFEST_FILE = "manifest.json"

FORMAT_VERSIONS = {
    "dataset": storage.VERSION,
    "checkpoint": checkpoint.VERSION,
    "train_state": 1,
    "image": "P5/P6 binary, floor(127.5*(v+1)+0.5)",
}


def _utc_now() -> str:
    return datetime.now(pytz.UTC).isoformat()


class RunManifest(BaseModel):
    command: str
    argv: List[str]
    seed: int
    config: Dict[str, str]  # flat dotted key -> value, replayable with --config
    formats: Dict[str, Union[int, str]] = Field(default_factory=lambda: dict(FORMAT_VERSIONS))
    layout: Dict[str, str] = Field(default_factory=dict)
    started_at: str = Field(default_factory=_utc_now)
    finished_at: Optional[str] = None
    status: str = "running"

    @classmethod
    def create(cls, command: str, argv: List[str], config: ExperimentConfig, layout: Dict[str, str]) -> "RunManifest":
        return cls(
            command=command,
            argv=list(argv),
            seed=config.experiment.seed,
            config=dict(config.flatten()),
            layout=layout,
        )

    def config_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.config.items())

    def write(self, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_FILE
        path.write_text(json.dumps(self.model_dump(), indent=2) + "\n", encoding="utf-8")
        (out_dir / "config.cfg").write_text(self.config_text(), encoding="utf-8")
        return path

    def finish(self, out_dir: Union[str, Path], status: str = "ok") -> Path:
        self.finished_at = _utc_now()
        self.status = status
        return self.write(out_dir)


def read_manifest(out_dir: Union[str, Path]) -> RunManifest:
    return RunManifest.model_validate_json(Path(out_dir, MANIFEST_FILE).read_text(encoding="utf-8"))
