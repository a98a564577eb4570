"""
The active training loop.

    for epoch in 0..E-1:
        train the classifier one epoch on real + generated samples
        evaluate on the validation split (and the held-out test split)
        if epoch < gen_stop_fraction * E:
            mine hard validation samples
            generate up to gen_per_epoch images guided by them
            append the generations to the training set

Every random draw comes from a stream keyed by (seed, purpose, epoch, job),
so a run resumed at an epoch boundary or spread over several threads makes the
same decisions as a straight sequential run.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from active.lineage import LineageRecord, LineageRecorder
from active.metrics import MetricsRecorder, MetricsRow
from active.state import TrainState, save_state
from classifier.mining import EvalReport, evaluate, find_hard_samples
from classifier.model import ClassifierArch, ConvClassifier
from classifier.training import learning_rate, train_classifier_epoch
from diffusion.denoiser import ConditionalDenoiser
from diffusion.schedule import NoiseSchedule
from guidance.events import GenerationEvents, merge_events, write_events_csv
from guidance.generator import generate_plain, guided_generate, resolve_rho
from guidance.losses import confidence_to_guidance
from guidance.memory_bank import MemoryBank
from numerics.optim import MomentumSGD
from numerics.rng import make_rng
from numerics.tensor import Tensor
from shapes.checkpoint import save_classifier
from shapes.dataset import ShapeDataset
from shapes.images import dump_image, tile_images
from shared.config import ExperimentConfig
from shared.errors import ActGenError, CheckpointError, ConfigError, UsageError
from shared.log import log, warn

Mode = Literal["actgen", "real_only", "random_gen"]
MODES = ("actgen", "real_only", "random_gen")


@dataclass
class DataSplits:
    train: ShapeDataset
    val: ShapeDataset
    test: ShapeDataset


def _stratified_counts(labels: np.ndarray, k: int) -> dict:
    """Per-class share of ``k`` by largest remainder; sums to exactly ``k``."""
    classes, counts = np.unique(labels, return_counts=True)
    quota = k * counts / counts.sum()
    base = np.floor(quota).astype(np.int64)
    order = np.argsort(-(quota - base), kind="stable")
    base[order[: k - int(base.sum())]] += 1
    return dict(zip(classes.tolist(), base.tolist()))


def partition_indices(labels: np.ndarray, val_size: int, seed: int, salt: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    n = len(labels)
    if not (0 <= val_size < n):
        raise ConfigError("experiment.val_size", f"must be in [0, {n}) for a dataset of {n} samples, got {val_size}")
    if val_size == 0:
        return np.arange(n), np.zeros(0, dtype=np.int64)
    rng = make_rng(seed, "partition", salt)
    take = _stratified_counts(labels, val_size)
    val = []
    for c in sorted(take):
        members = np.flatnonzero(labels == c)
        val.extend(rng.permutation(members)[: take[c]].tolist())
    val_idx = np.sort(np.asarray(val, dtype=np.int64))
    train_idx = np.setdiff1d(np.arange(n), val_idx)
    return train_idx, val_idx


def partition_dataset(dataset: ShapeDataset, val_size: int, seed: int, salt: int = 0) -> Tuple[ShapeDataset, ShapeDataset]:
    """Disjoint, exhaustive, label-stratified split."""
    train_idx, val_idx = partition_indices(dataset.labels, val_size, seed, salt)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def split_dataset(dataset: ShapeDataset, val_size: int, test_size: int, seed: int) -> DataSplits:
    """Held-out test split first, then the validation split from the rest."""
    rest, test = partition_dataset(dataset, test_size, seed, salt=0)
    train, val = partition_dataset(rest, val_size, seed, salt=1)
    return DataSplits(train=train, val=val, test=test)


def adversarial_probability(epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        raise ConfigError("experiment.total_epochs", "must be positive")
    if not (0 <= epoch <= total_epochs):
        raise ActGenError(f"epoch {epoch} outside [0, {total_epochs}]")
    return 0.5 * epoch / total_epochs


def generation_jobs(mined: Sequence[int], multiplicity: int, budget: int) -> List[int]:
    """Guide index per generation: each guide ``multiplicity`` times, round-robin up to ``budget``."""
    expanded = [g for g in mined for _ in range(multiplicity)]
    if not expanded:
        return []
    return [expanded[k % len(expanded)] for k in range(budget)]


def classifier_arch(config: ExperimentConfig) -> ClassifierArch:
    return ClassifierArch(
        image_channels=config.data.channels,
        image_size=config.data.image_size,
        num_classes=config.data.num_classes,
        width1=config.classifier.width1,
        width2=config.classifier.width2,
    )


class ActiveTrainer:
    """Runs the active loop (or one of its baselines) and owns its state."""

    def __init__(
        self,
        config: ExperimentConfig,
        splits: DataSplits,
        denoiser: Optional[ConditionalDenoiser],
        sched: Optional[NoiseSchedule],
        out_dir: Optional[Union[str, Path]] = None,
        mode: Mode = "actgen",
        threads: int = 1,
        state: Optional[TrainState] = None,
    ):
        if mode not in MODES:
            raise UsageError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        exp = config.experiment
        if mode != "real_only" and exp.gen_per_epoch > 0 and (denoiser is None or sched is None):
            raise CheckpointError("a trained denoiser checkpoint is required for generation (paths.denoiser_checkpoint)")
        if len(splits.train) == 0:
            raise ConfigError("experiment.val_size", "leaves no training samples")

        self.config = config
        self.exp = exp
        self.splits = splits
        self.denoiser = denoiser
        self.sched = sched
        self.mode = mode
        self.threads = max(int(threads), 1)
        self.seed = exp.seed
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.guidance = resolve_rho(config.guidance, splits.train.images)

        self.metrics = MetricsRecorder(self.out_dir, exp.record_wall_time)
        self.lineage = LineageRecorder(self.out_dir)

        if state is None:
            self.epoch = 0
            self.classifier = ConvClassifier.create(classifier_arch(config), make_rng(self.seed, "init", 1))
            self.optimizer = MomentumSGD(config.classifier.momentum, config.classifier.weight_decay)
            self.bank = MemoryBank(config.guidance.bank_capacity)
            self.gen_images: List[np.ndarray] = []
            self.gen_labels: List[int] = []
        else:
            self.epoch = state.epoch
            self.classifier = state.classifier
            self.optimizer = state.optimizer
            self.bank = state.bank
            self.gen_images = list(state.gen_images)
            self.gen_labels = [int(y) for y in state.gen_labels]
            self.metrics.restore(state.metrics)
            self.lineage.restore(state.lineage)
            log(self._tag, f"resuming at epoch {self.epoch} with {len(self.gen_labels)} generated samples")

    @property
    def _tag(self) -> str:
        return {"actgen": "ActGen", "real_only": "RealOnly", "random_gen": "RandomGen"}[self.mode]

    # ------------------------------------------------------------------

    def run(self) -> Tuple[ConvClassifier, pd.DataFrame]:
        total = self.exp.total_epochs
        log(
            self._tag,
            f"train={len(self.splits.train)} val={len(self.splits.val)} test={len(self.splits.test)} "
            f"epochs={total} gen_per_epoch={self.exp.gen_per_epoch} threads={self.threads}",
        )
        if self.epoch == 0:
            self._persist()
        for epoch in range(self.epoch, total):
            self.metrics.start_epoch()
            try:
                self._run_epoch(epoch)
            except ActGenError as exc:
                warn(self._tag, f"epoch {epoch} failed: {exc}; state of epoch {self.epoch} kept for --resume")
                raise
            self.epoch = epoch + 1
            self._persist()

        if self.out_dir is not None:
            save_classifier(self.out_dir / "classifier.ckpt", self.classifier, {"mode": self.mode})
        final = self.metrics.last
        if final is not None:
            log(
                self._tag,
                f"done: test_acc={final.test_acc:.4f} generated={final.n_generated_cum} "
                f"adversarial={final.n_adversarial_cum}",
            )
        return self.classifier, self.metrics.to_frame()

    def _run_epoch(self, epoch: int) -> None:
        exp, clf_cfg = self.exp, self.config.classifier
        images, labels = self._training_set()
        lr = learning_rate(epoch, exp.total_epochs, clf_cfg.lr, clf_cfg.warmup_epochs)

        self.metrics.start("train")
        self.classifier, loss = train_classifier_epoch(
            self.classifier,
            images,
            labels,
            lr,
            make_rng(self.seed, "classifier", epoch),
            self.optimizer,
            clf_cfg.batch_size,
        )
        self.metrics.stop(epoch, "train")

        val_report = evaluate(self.classifier, self.splits.val.images, self.splits.val.labels)
        test_report = evaluate(self.classifier, self.splits.test.images, self.splits.test.labels)

        if self.mode != "real_only" and self._generates_at(epoch):
            mined = find_hard_samples(val_report, exp.selection, exp.threshold)
            self.lineage.record_mined(epoch, mined, self.splits.val.labels[mined] if mined else [])
            self.metrics.start("generate")
            self._generate(epoch, mined, val_report)
            self.metrics.stop(epoch, "generate")

        row = self.metrics.record(
            MetricsRow(
                epoch=epoch,
                train_loss=loss,
                val_acc=val_report.accuracy,
                test_acc=test_report.accuracy,
                n_generated_cum=self.lineage.n_generated,
                n_adversarial_cum=self.lineage.n_adversarial,
            )
        )
        log(
            self._tag,
            f"epoch {epoch + 1}/{exp.total_epochs} lr={lr:.4f} loss={row.train_loss:.4f} "
            f"val_acc={row.val_acc:.4f} test_acc={row.test_acc:.4f} generated={row.n_generated_cum}",
        )

    def _generates_at(self, epoch: int) -> bool:
        return self.exp.gen_per_epoch > 0 and epoch < self.exp.gen_stop_fraction * self.exp.total_epochs

    def _training_set(self) -> Tuple[np.ndarray, np.ndarray]:
        train = self.splits.train
        if not self.gen_images:
            return train.images, train.labels
        images = np.concatenate([train.images, np.stack(self.gen_images)])
        labels = np.concatenate([train.labels, np.asarray(self.gen_labels, dtype=np.int64)])
        return images, labels

    # ------------------------------------------------------------------

    def _generate(self, epoch: int, mined: List[int], report: EvalReport) -> None:
        if not mined:
            log(self._tag, f"epoch {epoch + 1}: no hard samples, nothing to generate")
            return
        cfg = self.guidance
        guides = generation_jobs(mined, self.exp.multiplicity, self.exp.gen_per_epoch)
        p_adv = adversarial_probability(epoch, self.exp.total_epochs)
        flag_rng = make_rng(self.seed, "generation", epoch)
        draws = flag_rng.random(len(guides))
        flags = [bool(d < p_adv) and cfg.adversarial and self.mode == "actgen" for d in draws]

        val = self.splits.val
        confidence = report.per_sample["confidence"].to_numpy()
        snapshot = self.bank.snapshot()
        classifier = self.classifier

        def job(k: int) -> Tuple[Tensor, GenerationEvents]:
            guide = guides[k]
            y = int(val.labels[guide])
            rng = make_rng(self.seed, "generation", epoch, k)
            if self.mode == "random_gen":
                return generate_plain(self.denoiser, y, self.sched, rng, cfg.s), GenerationEvents()
            strength = None
            if cfg.strength_from_confidence:
                strength = confidence_to_guidance(
                    float(confidence[guide]), cfg.eta_L, cfg.eta_k, cfg.eta_p, cfg.eta_u
                )
            return guided_generate(
                self.denoiser,
                classifier,
                Tensor(val.images[guide]),
                y,
                cfg,
                snapshot,
                self.sched,
                rng,
                gt_mask=Tensor(val.masks[guide]),
                adversarial=flags[k],
                bank_rng=make_rng(self.seed, "bank", epoch, k),
                insert=False,
                strength=strength,
            )

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(job, range(len(guides))))
        else:
            results = [job(k) for k in range(len(guides))]

        first_id = self.lineage.n_generated
        for k, (image, events) in enumerate(results):
            y = int(val.labels[guides[k]])
            if self.mode == "actgen":
                self.bank.insert(y, image)
            self.gen_images.append(image.numpy())
            self.gen_labels.append(y)
            self.lineage.record_generation(
                LineageRecord(
                    gen_id=first_id + k,
                    epoch=epoch,
                    guide_index=guides[k],
                    label=y,
                    adversarial_flag=flags[k],
                    final_l_contra=events.final_l_contra,
                    final_l_adv=events.final_l_adv,
                )
            )

        if self.out_dir is not None:
            if self.mode == "actgen":
                frame = merge_events([events for _, events in results], first_gen_id=first_id)
                write_events_csv(frame, self.out_dir / "events" / f"epoch_{epoch:03d}.csv")
            grid = tile_images([image for image, _ in results[:16]], cols=8)
            dump_image(grid, self.out_dir / "generated" / f"epoch_{epoch:03d}.{'pgm' if grid.shape[0] == 1 else 'ppm'}")
        log(
            self._tag,
            f"epoch {epoch + 1}: {len(mined)} hard samples, generated {len(results)} "
            f"({sum(flags)} adversarial, p_adv={p_adv:.3f})",
        )

    # ------------------------------------------------------------------

    def _persist(self) -> None:
        self.metrics.flush()
        self.lineage.flush()
        if self.out_dir is None:
            return
        c, h, w = self.splits.train.images.shape[1:]
        state = TrainState(
            epoch=self.epoch,
            classifier=self.classifier,
            optimizer=self.optimizer,
            bank=self.bank,
            gen_images=np.stack(self.gen_images) if self.gen_images else np.zeros((0, c, h, w)),
            gen_labels=np.asarray(self.gen_labels, dtype=np.int64),
            lineage=self.lineage.to_state(),
            metrics=self.metrics.to_state(),
            config_text=self.config.to_text(),
        )
        save_state(self.out_dir / "state", state)


def run_actgen(
    config: ExperimentConfig,
    splits: DataSplits,
    denoiser: ConditionalDenoiser,
    sched: NoiseSchedule,
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
    state: Optional[TrainState] = None,
) -> Tuple[ConvClassifier, pd.DataFrame]:
    return ActiveTrainer(config, splits, denoiser, sched, out_dir, "actgen", threads, state).run()


def run_baseline(
    config: ExperimentConfig,
    mode: Mode,
    splits: DataSplits,
    denoiser: Optional[ConditionalDenoiser] = None,
    sched: Optional[NoiseSchedule] = None,
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
    state: Optional[TrainState] = None,
) -> Tuple[ConvClassifier, pd.DataFrame]:
    """``real_only`` never generates; ``random_gen`` spends the same budget on plain samples."""
    if mode not in ("real_only", "random_gen"):
        raise UsageError(f"baseline mode must be real_only or random_gen, got {mode!r}")
    return ActiveTrainer(config, splits, denoiser, sched, out_dir, mode, threads, state).run()
