"""Config parsing, exit codes and the end-to-end command pipeline."""

import json

import pandas as pd
import pytest

from cli.main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from cli.manifest import read_manifest
from shapes.storage import load_dataset
from shared.config import ExperimentConfig, parse_config, parse_config_text
from shared.errors import ConfigError


@pytest.fixture
def config_file(toy_config, tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(toy_config.with_overrides(diffusion={"epochs": 2}).to_text(), encoding="utf-8")
    return path


# -------------------------------------------------------------- config files


def test_empty_config_gives_documented_defaults():
    config = parse_config_text("# nothing but a comment\n\n")
    assert config == ExperimentConfig()
    g = config.guidance
    assert (g.s, g.i, g.rho, g.n_cap, g.grad_window) == (15.0, 12.5, 200.0, 1024, 10)
    assert config.diffusion.steps == 40
    assert parse_config(None) == config


def test_values_are_typed_and_aliased():
    config = parse_config_text("guidance.lambda = 0.5\nguidance.adversarial=false\nexperiment.threshold=none\n")
    assert config.guidance.lam == 0.5
    assert config.guidance.adversarial is False
    assert config.experiment.threshold is None


@pytest.mark.parametrize(
    "text, key",
    [
        ("guidance.rho=-1\n", "guidance.rho"),
        ("guidance.colour=red\n", "guidance.colour"),
        ("optics.zoom=2\n", "optics.zoom"),
        ("guidance.s=1\nguidance.s=2\n", "guidance.s"),
        ("rho=1\n", "rho"),
        ("experiment.selection=confidence_below\n", "experiment"),
    ],
)
def test_bad_config_names_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config_text(text)
    assert err.value.key == key


def test_missing_line_separator_reports_the_line():
    with pytest.raises(ConfigError) as err:
        parse_config_text("guidance.s=1\njust words\n", source="run.cfg")
    assert err.value.key == "run.cfg:2"


def test_grad_window_must_fit_the_schedule():
    with pytest.raises(ConfigError):
        parse_config_text("diffusion.steps=5\nguidance.grad_window=6\n")


def test_resolved_config_replays_exactly(toy_config):
    assert parse_config_text(toy_config.to_text()) == toy_config


def test_unreadable_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")


# -------------------------------------------------------------- exit codes


def test_no_arguments_is_a_usage_error():
    assert main([]) == EXIT_USAGE


def test_unknown_flag_and_command_are_usage_errors(tmp_path):
    assert main(["make-data", "--colour", "red"]) == EXIT_USAGE
    assert main(["paint"]) == EXIT_USAGE
    assert main(["run-baseline", "--mode", "mixed", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["compare", "--seeds", "0", "--out", str(tmp_path / "cmp")]) == EXIT_USAGE


def test_bad_config_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("guidance.rho=-1\n", encoding="utf-8")
    assert main(["make-data", "--config", str(bad), "--out", str(tmp_path / "run")]) == EXIT_CONFIG
    assert main(["make-data", "--seed", "-3", "--out", str(tmp_path / "run")]) == EXIT_CONFIG


def test_missing_checkpoint_exits_with_runtime_code(config_file, tmp_path):
    assert main(["run-actgen", "--config", str(config_file), "--out", str(tmp_path / "run")]) == EXIT_RUNTIME
    assert main(["gen-demo", "--config", str(config_file), "--out", str(tmp_path / "demo")]) == EXIT_RUNTIME
    assert main(["run-actgen", "--resume", str(tmp_path / "nowhere")]) == EXIT_RUNTIME
    assert main(["compare", "--config", str(config_file), "--seeds", "2", "--out", str(tmp_path / "cmp")]) == EXIT_RUNTIME


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "run-actgen" in capsys.readouterr().out


# -------------------------------------------------------------- commands


def test_make_data_writes_dataset_and_manifest(config_file, toy_config, tmp_path):
    out = tmp_path / "data"
    assert main(["make-data", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    dataset = load_dataset(out / "dataset.actg")
    assert dataset.spec == toy_config.data
    assert (out / "samples.pgm").exists()

    manifest = read_manifest(out)
    assert manifest.command == "make-data" and manifest.status == "ok"
    assert manifest.finished_at is not None
    assert manifest.config["guidance.rho"] == "5.0"
    assert parse_config(out / "config.cfg") == parse_config(config_file)
    assert "dataset.actg" in json.loads((out / "manifest.json").read_text())["layout"]


def test_make_data_seed_changes_the_images(config_file, tmp_path):
    main(["make-data", "--config", str(config_file), "--out", str(tmp_path / "a")])
    main(["make-data", "--config", str(config_file), "--seed", "8", "--out", str(tmp_path / "b")])
    a = load_dataset(tmp_path / "a" / "dataset.actg")
    b = load_dataset(tmp_path / "b" / "dataset.actg")
    assert b.spec.seed == 8
    assert not (a.images == b.images).all()


def test_train_classifier_then_resume_a_finished_run(config_file, tmp_path):
    out = tmp_path / "clf"
    assert main(["train-classifier", "--config", str(config_file), "--out", str(out)]) == EXIT_OK
    metrics = pd.read_csv(out / "metrics.csv")
    assert len(metrics) == 3 and (metrics["n_generated_cum"] == 0).all()
    assert (out / "classifier.ckpt").exists()
    before = (out / "metrics.csv").read_bytes()
    assert main(["run-baseline", "--mode", "real_only", "--resume", str(out)]) == EXIT_OK
    assert (out / "metrics.csv").read_bytes() == before


@pytest.mark.slow
def test_full_pipeline(config_file, tmp_path):
    diffusion = tmp_path / "diffusion"
    assert main(["train-diffusion", "--config", str(config_file), "--out", str(diffusion)]) == EXIT_OK
    assert len(pd.read_csv(diffusion / "diffusion_loss.csv")) == 2

    cfg = tmp_path / "with_ckpt.cfg"
    cfg.write_text(
        config_file.read_text().replace("paths.denoiser_checkpoint=none", f"paths.denoiser_checkpoint={diffusion / 'denoiser.ckpt'}"),
        encoding="utf-8",
    )
    run = tmp_path / "actgen"
    assert main(["run-actgen", "--config", str(cfg), "--threads", "2", "--out", str(run)]) == EXIT_OK
    lineage = pd.read_csv(run / "lineage.csv")
    assert len(lineage) == pd.read_csv(run / "metrics.csv")["n_generated_cum"].iloc[-1]

    demo = tmp_path / "demo"
    assert main(["gen-demo", "--config", str(cfg), "--out", str(demo)]) == EXIT_OK
    arms = pd.read_csv(demo / "arms.csv")
    assert arms["arm"].tolist() == ["random", "image_guidance", "attentive", "contrastive"]
    assert not (demo / "adversarial_pairs.csv").exists()
    assert (demo / "mask_iou.csv").exists()

    compare = tmp_path / "compare"
    assert main(["compare", "--config", str(cfg), "--seeds", "2", "--out", str(compare)]) == EXIT_OK
    runs = pd.read_csv(compare / "compare.csv")
    assert len(runs) == 6 and set(runs["mode"]) == {"real_only", "random_gen", "actgen"}
    generated = runs[runs["mode"] != "real_only"]["n_generated"]
    assert generated.nunique() == 1
    summary = pd.read_csv(compare / "compare_summary.csv")
    assert summary["seed"].tolist() == [0, 1]
    assert (compare / "seed_000" / "real_only" / "metrics.csv").exists()


@pytest.mark.slow
def test_verify_suite_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "verify")]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "verify" / "verify.csv")
    assert frame["passed"].all()


@pytest.mark.slow
def test_full_verify_suite_passes(tmp_path):
    assert main(["verify", "--full", "--out", str(tmp_path / "verify")]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "verify" / "verify.csv")
    assert frame["passed"].all(), frame.loc[~frame["passed"], ["name", "detail"]].to_string()
    names = set(frame["name"])
    assert {"attention masks locate the foreground", "contrastive guidance increases diversity"} <= names
