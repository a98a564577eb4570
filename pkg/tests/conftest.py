"""Shared fixtures: tiny models, short schedules and a toy dataset."""

import pytest

from classifier.model import ClassifierArch, ConvClassifier
from diffusion.denoiser import ConditionalDenoiser, DenoiserArch
from diffusion.schedule import build_schedule
from numerics.rng import make_rng
from shapes.dataset import generate_shapes_dataset
from shared.config import ExperimentConfig, ShapeDatasetSpec

TINY_DENOISER = DenoiserArch(image_channels=1, image_size=8, num_classes=3, embed_dim=4, channels=4, heads=2, time_dim=4)
TINY_CLASSIFIER = ClassifierArch(image_channels=1, image_size=8, num_classes=3, width1=3, width2=4)
TOY_SPEC = ShapeDatasetSpec(
    image_size=8, num_classes=3, samples_per_class=20, base_scale=0.3, position_jitter=0.5, seed=3
)


@pytest.fixture
def denoiser():
    return ConditionalDenoiser.create(TINY_DENOISER, make_rng(11, "init", 0))


@pytest.fixture
def classifier():
    return ConvClassifier.create(TINY_CLASSIFIER, make_rng(11, "init", 1))


@pytest.fixture
def short_schedule():
    return build_schedule("linear", 6, 0.02, 0.3)


@pytest.fixture(scope="session")
def toy_dataset():
    return generate_shapes_dataset(TOY_SPEC)


@pytest.fixture
def rng():
    return make_rng(1234, "verify", 99)


@pytest.fixture
def toy_config():
    """Small but complete experiment over the toy dataset."""
    return ExperimentConfig.model_validate(
        {
            "data": TOY_SPEC.model_dump(),
            "diffusion": {"steps": 6, "beta_min": 0.02, "beta_max": 0.3, "embed_dim": 4, "channels": 4, "time_dim": 4},
            "classifier": {"width1": 3, "width2": 4, "batch_size": 16},
            "guidance": {"grad_window": 3, "rho": 5.0, "s": 2.0, "i": 2.0, "n_cap": 8},
            "experiment": {"total_epochs": 3, "val_size": 12, "test_size": 12, "gen_per_epoch": 4, "gen_stop_fraction": 1.0},
        }
    )
