"""
ActGen against both baselines over several seeds.

Every seed reuses the same data splits and denoiser; only ``experiment.seed``
changes, so classifier initialisation, mining draws and generation noise vary
while the evaluation sets stay fixed. Each (seed, mode) run writes its usual
outputs under ``<out>/seed_<seed>/<mode>/``.
"""

from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from active.loop import DataSplits, run_actgen, run_baseline
from diffusion.denoiser import ConditionalDenoiser
from diffusion.schedule import NoiseSchedule
from shared.config import ExperimentConfig
from shared.errors import ActGenError
from shared.log import log

COMPARE_MODES = ("real_only", "random_gen", "actgen")
COMPARE_COLUMNS = ["seed", "mode", "test_acc", "val_acc", "n_generated", "n_adversarial"]
SUMMARY_COLUMNS = ["seed", "real_only", "random_gen", "actgen", "gain_over_real", "gain_over_random"]


def compare_modes(
    config: ExperimentConfig,
    splits: DataSplits,
    denoiser: Optional[ConditionalDenoiser],
    sched: Optional[NoiseSchedule],
    seeds: Sequence[int],
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
) -> pd.DataFrame:
    """Final-epoch metrics of every mode for every seed, one row per run."""
    if not seeds:
        raise ActGenError("compare_modes: no seeds given")
    rows = []
    for seed in seeds:
        seeded = config.with_overrides(experiment={"seed": int(seed)})
        for mode in COMPARE_MODES:
            run_out = Path(out_dir) / f"seed_{int(seed):03d}" / mode if out_dir is not None else None
            if mode == "actgen":
                _, metrics = run_actgen(seeded, splits, denoiser, sched, out_dir=run_out, threads=threads)
            else:
                _, metrics = run_baseline(seeded, mode, splits, denoiser, sched, out_dir=run_out, threads=threads)
            final = metrics.iloc[-1]
            rows.append(
                {
                    "seed": int(seed),
                    "mode": mode,
                    "test_acc": float(final["test_acc"]),
                    "val_acc": float(final["val_acc"]),
                    "n_generated": int(final["n_generated_cum"]),
                    "n_adversarial": int(final["n_adversarial_cum"]),
                }
            )
        log("Compare", f"seed {seed}: " + ", ".join(f"{r['mode']}={r['test_acc']:.4f}" for r in rows[-3:]))
    return pd.DataFrame(rows, columns=COMPARE_COLUMNS)


def summarize_comparison(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-seed test accuracy of each mode and ActGen's gain over both baselines."""
    table = frame.pivot(index="seed", columns="mode", values="test_acc")
    table = table.reindex(columns=list(COMPARE_MODES))
    table["gain_over_real"] = table["actgen"] - table["real_only"]
    table["gain_over_random"] = table["actgen"] - table["random_gen"]
    return table.reset_index()[SUMMARY_COLUMNS]


def comparison_verdict(frame: pd.DataFrame) -> Dict[str, object]:
    """Counts behind the headline comparison.

    ``budget_exact`` holds when every generating run spent the same number of
    generations and ``real_only`` spent none.
    """
    summary = summarize_comparison(frame)
    generating = frame[frame["mode"] != "real_only"]["n_generated"]
    return {
        "seeds": len(summary),
        "median_actgen": float(np.median(summary["actgen"])),
        "median_real_only": float(np.median(summary["real_only"])),
        "median_random_gen": float(np.median(summary["random_gen"])),
        "beats_real_only": int((summary["gain_over_real"] > 0).sum()),
        "matches_random_gen": int((summary["gain_over_random"] >= 0).sum()),
        "budget": int(generating.iloc[0]) if len(generating) else 0,
        "budget_exact": bool(generating.nunique() <= 1 and (frame[frame["mode"] == "real_only"]["n_generated"] == 0).all()),
    }
