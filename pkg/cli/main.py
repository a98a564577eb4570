"""
Command-line entry point.

Usage:
    python -m cli.main make-data        [--config FILE] [--seed N] [--out DIR]
    python -m cli.main train-diffusion  [--config FILE] [--seed N] [--out DIR]
    python -m cli.main train-classifier [--config FILE] [--seed N] [--out DIR]
    python -m cli.main run-actgen       [--config FILE] [--seed N] [--out DIR] [--threads N] [--resume DIR]
    python -m cli.main run-baseline     --mode real_only|random_gen [...same flags...]
    python -m cli.main gen-demo         [--config FILE] [--seed N] [--out DIR]
    python -m cli.main compare          [--config FILE] [--seed N] [--out DIR] [--seeds N] [--threads N]
    python -m cli.main verify           [--full] [--seed N] [--out DIR]

Exit codes: 0 ok, 1 usage, 2 config, 3 runtime.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from active.compare import compare_modes, comparison_verdict, summarize_comparison
from active.loop import DataSplits, run_actgen, run_baseline, split_dataset
from active.state import find_state, load_state
from classifier.model import ConvClassifier
from cli.demo import run_demo
from cli.manifest import RunManifest
from cli.verify import results_frame, run_checks
from diffusion.denoiser import ConditionalDenoiser, DenoiserArch
from diffusion.schedule import NoiseSchedule, build_schedule
from diffusion.training import train_denoiser
from numerics.rng import make_rng
from shapes.checkpoint import load_classifier, load_denoiser, save_denoiser
from shapes.dataset import ShapeDataset, generate_shapes_dataset
from shapes.images import dump_image, tile_images
from shapes.storage import load_dataset, save_dataset
from shared.config import ExperimentConfig, parse_config, parse_config_text, settings
from shared.errors import ActGenError, CheckpointError, ConfigError, UsageError
from shared.log import log, warn

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

LAYOUT = {
    "make-data": {"dataset.actg": "encoded dataset", "samples.pgm": "first images of each class"},
    "train-diffusion": {"denoiser.ckpt": "denoiser weights", "diffusion_loss.csv": "mean loss per epoch"},
    "train-classifier": {"classifier.ckpt": "classifier weights", "metrics.csv": "per-epoch metrics"},
    "run-actgen": {
        "metrics.csv": "per-epoch metrics",
        "timings.csv": "per-phase wall time",
        "lineage.csv": "one row per generated sample",
        "mining_counts.csv": "times each validation sample was mined",
        "events/": "per-step guidance events per epoch",
        "generated/": "image grid per epoch",
        "state/": "resumable training state",
        "classifier.ckpt": "final classifier",
    },
    "gen-demo": {
        "arms.pgm": "guides then one row per arm",
        "arms.csv": "per-arm distance statistics",
        "adversarial_pairs.pgm": "guides, plain and adversarial rows",
        "adversarial_pairs.csv": "classifier outcome per pair",
        "mask_iou.csv": "attention mask IoU against ground truth",
    },
    "compare": {
        "compare.csv": "final metrics of every (seed, mode) run",
        "compare_summary.csv": "per-seed test accuracy and ActGen gains",
        "seed_XXX/": "full outputs of each run",
    },
    "verify": {"verify.csv": "one row per invariant check"},
}
LAYOUT["run-baseline"] = LAYOUT["run-actgen"]


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns exit codes."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="actgen", description="Training-aware guided generation on toy shapes")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    def add(name: str, help_text: str) -> ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="key=value config file (default: all defaults)")
        p.add_argument("--seed", type=int, default=None, help="root seed, overrides experiment.seed")
        p.add_argument("--out", type=str, default=None, help="run directory (default: $ACTGEN_OUT/<command>)")
        return p

    add("make-data", "render the shapes dataset")
    add("train-diffusion", "train the conditional denoiser")
    add("train-classifier", "train the classifier on real data only")
    for name, help_text in (("run-actgen", "run the active generation loop"), ("run-baseline", "run a baseline loop")):
        p = add(name, help_text)
        p.add_argument("--threads", type=int, default=None, help="generation workers (default: $ACTGEN_THREADS)")
        p.add_argument("--resume", type=str, default=None, help="continue the run saved in DIR")
        if name == "run-baseline":
            p.add_argument("--mode", choices=("real_only", "random_gen"), default="real_only")
    add("gen-demo", "render guidance arms, adversarial pairs and the mask report")
    p = add("compare", "run ActGen and both baselines over several seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, counting up from the root seed")
    p.add_argument("--threads", type=int, default=None, help="generation workers (default: $ACTGEN_THREADS)")
    p = add("verify", "run the invariant suite")
    p.add_argument("--full", action="store_true", help="include the trained-model behaviour checks")
    return parser


# ---------------------------------------------------------------------------
# helpers


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("experiment.seed", "must be non-negative")
        config = config.with_overrides(experiment={"seed": args.seed})
    return config


def run_dir(args: argparse.Namespace) -> Path:
    return Path(args.out) if args.out else Path(settings.out) / args.command


def load_data(config: ExperimentConfig) -> ShapeDataset:
    """Dataset from ``paths.dataset`` when set, otherwise rendered from ``data``."""
    if config.paths.dataset is None:
        return generate_shapes_dataset(config.data)
    dataset = load_dataset(config.paths.dataset)
    if dataset.spec != config.data:
        warn("Data", f"{config.paths.dataset} was rendered with a different data spec; using the file")
    log("Data", f"loaded {len(dataset)} samples from {config.paths.dataset}")
    return dataset


def schedule_for(config: ExperimentConfig) -> NoiseSchedule:
    d = config.diffusion
    return build_schedule(d.schedule, d.steps, d.beta_min, d.beta_max)


def denoiser_arch(config: ExperimentConfig) -> DenoiserArch:
    d = config.diffusion
    return DenoiserArch(
        image_channels=config.data.channels,
        image_size=config.data.image_size,
        num_classes=config.data.num_classes,
        embed_dim=d.embed_dim,
        channels=d.channels,
        heads=d.heads,
        time_dim=d.time_dim,
    )


def require_denoiser(config: ExperimentConfig) -> ConditionalDenoiser:
    path = config.paths.denoiser_checkpoint
    if path is None:
        raise CheckpointError("paths.denoiser_checkpoint is not set; run train-diffusion first")
    if not Path(path).exists():
        raise CheckpointError(f"denoiser checkpoint not found: {path}")
    denoiser = load_denoiser(path)
    if denoiser.arch.image_size != config.data.image_size or denoiser.arch.num_classes != config.data.num_classes:
        raise CheckpointError(f"{path} was trained for a different image size or class count")
    return denoiser


def optional_classifier(config: ExperimentConfig) -> Optional[ConvClassifier]:
    path = config.paths.classifier_checkpoint
    if path is None:
        return None
    if not Path(path).exists():
        raise CheckpointError(f"classifier checkpoint not found: {path}")
    return load_classifier(path)


def splits_for(config: ExperimentConfig, dataset: ShapeDataset) -> DataSplits:
    exp = config.experiment
    return split_dataset(dataset, exp.val_size, exp.test_size, exp.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_make_data(config: ExperimentConfig, args, out: Path) -> None:
    spec = config.data if args.seed is None else config.data.model_copy(update={"seed": args.seed})
    dataset = generate_shapes_dataset(spec)
    save_dataset(dataset, out / "dataset.actg")
    firsts = [dataset.images[idx] for c in range(spec.num_classes) for idx in (dataset.labels == c).nonzero()[0][:8]]
    if firsts:
        grid = tile_images(firsts, cols=8)
        dump_image(grid, out / f"samples.{'pgm' if grid.shape[0] == 1 else 'ppm'}")
    log("Data", f"wrote {out / 'dataset.actg'} ({len(dataset)} samples, counts {dataset.class_counts()})")


def cmd_train_diffusion(config: ExperimentConfig, args, out: Path) -> None:
    d, seed = config.diffusion, config.experiment.seed
    splits = splits_for(config, load_data(config))
    denoiser = ConditionalDenoiser.create(denoiser_arch(config), make_rng(seed, "init", 0))
    denoiser, history = train_denoiser(
        denoiser,
        splits.train.images,
        splits.train.labels,
        schedule_for(config),
        d.epochs,
        d.drop_cond_prob,
        make_rng(seed, "diffusion-train"),
        batch_size=d.batch_size,
        lr=d.lr,
        masks=splits.train.masks,
        attn_weight=d.attn_weight,
    )
    save_denoiser(out / "denoiser.ckpt", denoiser)
    frame = pd.DataFrame({"epoch": range(1, len(history) + 1), "loss": history})
    frame.to_csv(out / "diffusion_loss.csv", index=False, float_format="%.10g")
    log("Denoiser", f"saved {out / 'denoiser.ckpt'}")


def cmd_train_classifier(config: ExperimentConfig, args, out: Path) -> None:
    splits = splits_for(config, load_data(config))
    run_baseline(config, "real_only", splits, out_dir=out)


def _resume(args) -> tuple:
    """(config, state) for ``--resume``; the saved config wins over ``--config``."""
    resume = Path(args.resume)
    if find_state(resume / "state") is None:
        raise CheckpointError(f"nothing to resume in {resume}")
    state = load_state(resume / "state")
    if args.config is not None or args.seed is not None:
        warn("CLI", "--resume uses the configuration saved with the run; --config/--seed ignored")
    return parse_config_text(state.config_text, source=str(resume / "state")), state


def cmd_run(config: ExperimentConfig, args, out: Path, state=None) -> None:
    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    splits = splits_for(config, load_data(config))
    mode = getattr(args, "mode", "actgen")
    needs_model = mode != "real_only" and config.experiment.gen_per_epoch > 0
    denoiser = require_denoiser(config) if needs_model else None
    sched = schedule_for(config) if needs_model else None
    if mode == "actgen":
        run_actgen(config, splits, denoiser, sched, out_dir=out, threads=threads, state=state)
    else:
        run_baseline(config, mode, splits, denoiser, sched, out_dir=out, threads=threads, state=state)


def cmd_gen_demo(config: ExperimentConfig, args, out: Path) -> None:
    denoiser = require_denoiser(config)
    classifier = optional_classifier(config)
    if classifier is None:
        warn("Demo", "paths.classifier_checkpoint not set; adversarial outputs skipped")
    splits = splits_for(config, load_data(config))
    guides = splits.val if len(splits.val) else splits.train
    run_demo(denoiser, classifier, guides, config.guidance, schedule_for(config), config.experiment.seed, out)


def cmd_compare(config: ExperimentConfig, args, out: Path) -> None:
    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    splits = splits_for(config, load_data(config))
    generates = config.experiment.gen_per_epoch > 0
    denoiser = require_denoiser(config) if generates else None
    sched = schedule_for(config) if generates else None
    base = config.experiment.seed
    frame = compare_modes(config, splits, denoiser, sched, range(base, base + args.seeds), out, threads)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / "compare.csv", index=False, float_format="%.10g")
    summarize_comparison(frame).to_csv(out / "compare_summary.csv", index=False, float_format="%.10g")
    v = comparison_verdict(frame)
    log(
        "Compare",
        f"median test_acc actgen={v['median_actgen']:.4f} real_only={v['median_real_only']:.4f} "
        f"random_gen={v['median_random_gen']:.4f}; actgen > real_only in {v['beats_real_only']}/{v['seeds']} seeds, "
        f">= random_gen in {v['matches_random_gen']}/{v['seeds']}; budget {v['budget']} "
        f"({'exact' if v['budget_exact'] else 'MISMATCH'})",
    )


def cmd_verify(config: ExperimentConfig, args, out: Path) -> bool:
    results = run_checks(full=args.full, seed=config.experiment.seed)
    out.mkdir(parents=True, exist_ok=True)
    results_frame(results).to_csv(out / "verify.csv", index=False, float_format="%.6g")
    failed = [r.name for r in results if not r.passed]
    log("Verify", f"{len(results) - len(failed)}/{len(results)} checks passed")
    return not failed


HANDLERS = {
    "make-data": cmd_make_data,
    "train-diffusion": cmd_train_diffusion,
    "train-classifier": cmd_train_classifier,
    "run-actgen": cmd_run,
    "run-baseline": cmd_run,
    "gen-demo": cmd_gen_demo,
    "compare": cmd_compare,
    "verify": cmd_verify,
}


def dispatch(args: argparse.Namespace, argv: List[str]) -> int:
    state = None
    if getattr(args, "resume", None):
        config, state = _resume(args)
        out = Path(args.resume)
    else:
        config = load_config(args)
        out = run_dir(args)

    manifest = RunManifest.create(args.command, argv, config, LAYOUT[args.command])
    manifest.write(out)
    log("CLI", f"{args.command} -> {out} (seed {config.experiment.seed})")

    handler = HANDLERS[args.command]
    if args.command in ("run-actgen", "run-baseline"):
        ok = handler(config, args, out, state) is not False
    else:
        ok = handler(config, args, out) is not False
    manifest.finish(out, "ok" if ok else "failed")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        return dispatch(args, argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"[ERROR] config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("\n[STOP] Interrupted; state of the last finished epoch is kept for --resume")
        return EXIT_RUNTIME
    except ActGenError as e:
        print(f"[ERROR] {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        print(f"[ERROR] unexpected failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
