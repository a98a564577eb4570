"""Active loop: splits, curriculum, baselines, determinism and resume."""

import numpy as np
import pandas as pd
import pytest

from active.compare import COMPARE_COLUMNS, compare_modes, comparison_verdict, summarize_comparison
from active.lineage import LINEAGE_COLUMNS, LineageRecord, LineageRecorder
from active.loop import (
    ActiveTrainer,
    adversarial_probability,
    generation_jobs,
    partition_indices,
    run_actgen,
    run_baseline,
    split_dataset,
)
from active.metrics import METRICS_COLUMNS, MetricsRecorder, MetricsRow
from active.state import find_state, load_state
from diffusion.schedule import build_schedule
from numerics.rng import make_rng
from shared.errors import ActGenError, CheckpointError, ConfigError, GuidanceError, UsageError


@pytest.fixture
def config(toy_config):
    return toy_config.with_overrides(experiment={"selection": "confidence_below", "threshold": 1.0})


@pytest.fixture
def splits(config, toy_dataset):
    exp = config.experiment
    return split_dataset(toy_dataset, exp.val_size, exp.test_size, exp.seed)


@pytest.fixture
def sched(config):
    d = config.diffusion
    return build_schedule(d.schedule, d.steps, d.beta_min, d.beta_max)


# -------------------------------------------------------------- pure helpers


def test_partition_is_disjoint_exhaustive_and_stratified():
    labels = np.repeat(np.arange(4), [30, 20, 25, 25])
    train, val = partition_indices(labels, 17, seed=3)
    assert len(np.intersect1d(train, val)) == 0
    assert sorted(np.concatenate([train, val]).tolist()) == list(range(100))
    for c, n_c in enumerate((30, 20, 25, 25)):
        assert abs((labels[val] == c).sum() - 17 * n_c / 100) <= 1
    again, _ = partition_indices(labels, 17, seed=3)
    assert np.array_equal(train, again)


def test_partition_bounds():
    labels = np.zeros(10, dtype=int)
    train, val = partition_indices(labels, 0, seed=0)
    assert len(train) == 10 and len(val) == 0
    with pytest.raises(ConfigError) as err:
        partition_indices(labels, 10, seed=0)
    assert err.value.key == "experiment.val_size"


def test_split_sizes(splits, config):
    assert len(splits.test) == config.experiment.test_size
    assert len(splits.val) == config.experiment.val_size
    assert len(splits.train) == 60 - 24


def test_adversarial_probability_ramp():
    assert adversarial_probability(0, 20) == 0.0
    assert adversarial_probability(10, 20) == 0.25
    assert adversarial_probability(20, 20) == 0.5
    with pytest.raises(ConfigError):
        adversarial_probability(0, 0)


def test_adversarial_flags_follow_the_probability():
    p = adversarial_probability(10, 20)
    draws = make_rng(0, "generation", 10).random(4000) < p
    assert abs(draws.mean() - p) <= 3 * np.sqrt(p * (1 - p) / 4000)


def test_generation_jobs_round_robin():
    assert generation_jobs([4, 9], 2, 5) == [4, 4, 9, 9, 4]
    assert generation_jobs([], 3, 5) == []
    assert generation_jobs([7], 1, 0) == []


def test_metrics_and_lineage_recorders(tmp_path):
    metrics = MetricsRecorder(tmp_path)
    metrics.record(MetricsRow(epoch=0, train_loss=1.5, val_acc=0.5, test_acc=0.25, n_generated_cum=2, n_adversarial_cum=0))
    metrics.flush()
    frame = pd.read_csv(tmp_path / "metrics.csv")
    assert list(frame.columns) == METRICS_COLUMNS
    assert frame["wall_seconds"].tolist() == [0.0]
    assert (tmp_path / "timings.csv").exists()

    lineage = LineageRecorder(tmp_path)
    lineage.record_mined(0, [3, 5], [1, 2])
    lineage.record_mined(1, [3], [1])
    lineage.record_generation(LineageRecord(0, 0, 3, 1, True, 0.5, -1.0))
    lineage.flush()
    assert list(pd.read_csv(tmp_path / "lineage.csv").columns) == LINEAGE_COLUMNS
    mining = pd.read_csv(tmp_path / "mining_counts.csv").set_index("val_index")
    assert mining.loc[3, "times_mined"] == 2 and mining.loc[3, "last_epoch"] == 1
    assert (lineage.n_generated, lineage.n_adversarial, len(lineage.mining)) == (1, 1, 2)

    restored = LineageRecorder()
    restored.restore(lineage.to_state())
    assert restored.lineage_frame().equals(lineage.lineage_frame())


def test_wall_time_continues_after_restore(tmp_path):
    first = MetricsRecorder(tmp_path, record_wall_time=True)
    first.start_epoch()
    first.record(MetricsRow(epoch=0, train_loss=1.0, val_acc=0.5, test_acc=0.5, n_generated_cum=0, n_adversarial_cum=0))
    before = first.rows[-1].wall_seconds
    assert before > 0.0

    resumed = MetricsRecorder(tmp_path, record_wall_time=True)
    resumed.restore(first.to_state())
    resumed.start_epoch()
    resumed.record(MetricsRow(epoch=1, train_loss=0.9, val_acc=0.6, test_acc=0.6, n_generated_cum=0, n_adversarial_cum=0))
    assert resumed.rows[-1].wall_seconds > before
    resumed.flush()
    timings = pd.read_csv(tmp_path / "timings.csv")
    assert timings.loc[timings["phase"] == "epoch", "epoch"].tolist() == [0, 1]


# -------------------------------------------------------------- full runs


def test_actgen_run_writes_outputs(config, splits, denoiser, sched, tmp_path):
    classifier, metrics = run_actgen(config, splits, denoiser, sched, out_dir=tmp_path)
    assert metrics["epoch"].tolist() == [0, 1, 2]
    assert metrics["n_generated_cum"].tolist() == [4, 8, 12]
    assert (metrics["n_adversarial_cum"].diff().dropna() >= 0).all()
    lineage = pd.read_csv(tmp_path / "lineage.csv")
    assert len(lineage) == 12 and lineage["gen_id"].tolist() == list(range(12))
    assert (lineage["class"] == splits.val.labels[lineage["guide_index"]]).all()
    events = pd.read_csv(tmp_path / "events" / "epoch_000.csv")
    assert len(events) == 4 * config.diffusion.steps
    assert (tmp_path / "generated" / "epoch_002.pgm").exists()
    assert (tmp_path / "classifier.ckpt").exists()
    state = load_state(tmp_path / "state")
    assert state.epoch == 3 and state.n_generated == 12
    assert len(state.bank) == 12


def test_real_only_never_generates(config, splits, tmp_path):
    _, metrics = run_baseline(config, "real_only", splits, out_dir=tmp_path)
    assert metrics["n_generated_cum"].tolist() == [0, 0, 0]
    assert not (tmp_path / "generated").exists()


def test_random_gen_spends_the_same_budget(config, splits, denoiser, sched):
    trainer = ActiveTrainer(config, splits, denoiser, sched, mode="random_gen")
    _, metrics = trainer.run()
    assert metrics["n_generated_cum"].tolist() == [4, 8, 12]
    assert metrics["n_adversarial_cum"].tolist() == [0, 0, 0]
    assert len(trainer.bank) == 0
    assert trainer.lineage.lineage_frame()["final_l_contra"].isna().all()


def test_generation_stops_after_the_configured_fraction(config, splits, denoiser, sched):
    cfg = config.with_overrides(experiment={"gen_stop_fraction": 0.5})
    _, metrics = run_actgen(cfg, splits, denoiser, sched)
    assert metrics["n_generated_cum"].tolist() == [4, 8, 8]


def test_generation_requires_a_denoiser(config, splits):
    with pytest.raises(CheckpointError):
        ActiveTrainer(config, splits, None, None)
    with pytest.raises(UsageError):
        ActiveTrainer(config, splits, None, None, mode="mixed")


def test_same_seed_runs_are_byte_identical(config, splits, denoiser, sched, tmp_path):
    run_actgen(config, splits, denoiser, sched, out_dir=tmp_path / "a")
    run_actgen(config, splits, denoiser, sched, out_dir=tmp_path / "b", threads=3)
    for name in ("metrics.csv", "lineage.csv", "mining_counts.csv", "events/epoch_001.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_resume_after_failure_matches_uninterrupted_run(config, splits, denoiser, sched, tmp_path, monkeypatch):
    run_actgen(config, splits, denoiser, sched, out_dir=tmp_path / "straight")

    original = ActiveTrainer._run_epoch

    def failing(self, epoch):
        if epoch == 2:
            raise GuidanceError("injected failure")
        return original(self, epoch)

    monkeypatch.setattr(ActiveTrainer, "_run_epoch", failing)
    with pytest.raises(GuidanceError):
        run_actgen(config, splits, denoiser, sched, out_dir=tmp_path / "resumed")
    monkeypatch.setattr(ActiveTrainer, "_run_epoch", original)

    assert find_state(tmp_path / "resumed" / "state") is not None
    state = load_state(tmp_path / "resumed" / "state")
    assert state.epoch == 2
    run_actgen(config, splits, denoiser, sched, out_dir=tmp_path / "resumed", state=state)
    for name in ("metrics.csv", "lineage.csv", "mining_counts.csv"):
        assert (tmp_path / "straight" / name).read_bytes() == (tmp_path / "resumed" / name).read_bytes(), name
    timings = pd.read_csv(tmp_path / "resumed" / "timings.csv")
    assert timings.loc[timings["phase"] == "epoch", "epoch"].tolist() == [0, 1, 2]


# -------------------------------------------------------------- comparison


def test_compare_modes_over_seeds(config, splits, denoiser, sched, tmp_path):
    frame = compare_modes(config, splits, denoiser, sched, [0, 1], out_dir=tmp_path)
    assert list(frame.columns) == COMPARE_COLUMNS
    assert frame["seed"].tolist() == [0, 0, 0, 1, 1, 1]
    assert frame["mode"].tolist() == ["real_only", "random_gen", "actgen"] * 2
    generated = frame.set_index(["seed", "mode"])["n_generated"]
    assert generated[(0, "real_only")] == 0
    assert generated[(0, "random_gen")] == generated[(0, "actgen")] == 12
    assert (tmp_path / "seed_001" / "actgen" / "metrics.csv").exists()

    _, alone = run_actgen(config.with_overrides(experiment={"seed": 1}), splits, denoiser, sched)
    assert frame.iloc[-1]["test_acc"] == alone.iloc[-1]["test_acc"]

    summary = summarize_comparison(frame)
    assert summary["seed"].tolist() == [0, 1]
    np.testing.assert_allclose(summary["gain_over_real"], summary["actgen"] - summary["real_only"])
    verdict = comparison_verdict(frame)
    assert verdict["seeds"] == 2 and verdict["budget"] == 12 and verdict["budget_exact"]
    assert 0 <= verdict["beats_real_only"] <= 2


def test_compare_needs_seeds(config, splits):
    with pytest.raises(ActGenError):
        compare_modes(config, splits, None, None, [])
