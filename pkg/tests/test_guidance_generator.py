"""guided_generate end to end on tiny untrained models."""

import numpy as np
import pytest

from guidance.generator import generate_plain, guided_generate, resolve_rho
from guidance.losses import mean_pairwise_distance
from guidance.memory_bank import MemoryBank
from numerics.rng import make_rng
from numerics.tensor import Tensor
from shared.config import GuidanceConfig
from shared.errors import GuidanceError, ShapeError


@pytest.fixture
def guide(toy_dataset):
    return toy_dataset[5]


def run(denoiser, classifier, guide, cfg, sched, bank=None, key=0, **kwargs):
    return guided_generate(
        denoiser,
        classifier,
        guide.image,
        guide.label,
        cfg,
        bank if bank is not None else MemoryBank(),
        sched,
        make_rng(9, "generation", 0, key),
        gt_mask=guide.gt_mask,
        bank_rng=make_rng(9, "bank", 0, key),
        **kwargs,
    )


def test_no_guidance_equals_plain_sampling(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(i=-1e9, grad_window=0, s=2.0)
    image, events = run(denoiser, classifier, guide, cfg, short_schedule, adversarial=False)
    plain = generate_plain(denoiser, guide.label, short_schedule, make_rng(9, "generation", 0, 0), s=2.0)
    assert np.array_equal(image.data, plain.data)
    assert len(events) == short_schedule.T


def test_disabled_image_guidance_equals_plain_sampling(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(image_guidance=False, contrastive=False, adversarial=False, s=2.0, grad_window=3)
    image, events = run(denoiser, classifier, guide, cfg, short_schedule)
    plain = generate_plain(denoiser, guide.label, short_schedule, make_rng(9, "generation", 0, 0), s=2.0)
    assert np.array_equal(image.data, plain.data)
    assert all(np.isnan(e.mask_mean) for e in events.rows)


def test_strong_full_mask_guidance_lands_on_the_guide(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(i=1e9, grad_window=0, mask_mode="none", s=2.0)
    image, _ = run(denoiser, classifier, guide, cfg, short_schedule, adversarial=False)
    # final step: t=1, sigma_1 = 0 and alpha_1 close to 1
    target = guide.image.data / np.sqrt(short_schedule.alpha[1])
    np.testing.assert_allclose(image.data, target, atol=1e-12)


def test_gradient_steps_are_logged_inside_the_window(denoiser, classifier, guide, short_schedule):
    bank = MemoryBank()
    for k in range(3):
        bank.insert(guide.label, Tensor(np.full((1, 8, 8), 0.1 * k)))
    cfg = GuidanceConfig(grad_window=2, rho=50.0, s=2.0, i=2.0, mask_mode="ground_truth")
    _, events = run(denoiser, classifier, guide, cfg, short_schedule, bank=bank, adversarial=True)
    frame = events.to_frame()
    assert frame["l_contra"].notna().tolist() == [True, True] + [False] * (short_schedule.T - 2)
    assert frame["l_adv"].notna().sum() == 2
    assert (frame.loc[:1, "grad_norm"] > 0).all()
    assert frame["mask_mean"].notna().all()
    assert events.final_l_contra == frame["l_contra"].iloc[1]


def test_generation_is_inserted_into_the_bank(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(grad_window=1, s=2.0, adversarial=False)
    bank = MemoryBank()
    image, _ = run(denoiser, classifier, guide, cfg, short_schedule, bank=bank)
    assert bank.size(guide.label) == 1
    assert np.array_equal(bank.entries(guide.label)[0].data, image.data.reshape(-1))
    run(denoiser, classifier, guide, cfg, short_schedule, bank=bank, key=1, insert=False)
    assert bank.size(guide.label) == 1


def test_same_seeds_give_identical_guided_samples(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(grad_window=3, s=2.0, i=3.0, rho=5.0)
    bank = MemoryBank()
    bank.insert(guide.label, guide.image)
    a, _ = run(denoiser, classifier, guide, cfg, short_schedule, bank=bank.snapshot(), adversarial=True)
    b, _ = run(denoiser, classifier, guide, cfg, short_schedule, bank=bank.snapshot(), adversarial=True)
    assert np.array_equal(a.data, b.data)


def test_strength_override_replaces_i(denoiser, classifier, guide, short_schedule):
    cfg = GuidanceConfig(i=-1e9, grad_window=0, s=2.0, mask_mode="none")
    weak, _ = run(denoiser, classifier, guide, cfg, short_schedule, adversarial=False)
    strong, _ = run(denoiser, classifier, guide, cfg, short_schedule, adversarial=False, strength=1e9)
    assert np.linalg.norm(strong.data - guide.image.data) < np.linalg.norm(weak.data - guide.image.data)


def test_adversarial_needs_a_classifier(denoiser, guide, short_schedule):
    with pytest.raises(GuidanceError):
        run(denoiser, None, guide, GuidanceConfig(grad_window=1), short_schedule, adversarial=True)


def test_guide_shape_is_checked(denoiser, classifier, short_schedule):
    with pytest.raises(ShapeError):
        guided_generate(
            denoiser, classifier, Tensor(np.zeros((1, 4, 4))), 0, GuidanceConfig(), MemoryBank(), short_schedule,
            make_rng(0, "generation", 0, 0),
        )


def test_resolve_rho(toy_dataset):
    cfg = GuidanceConfig(rho=200.0)
    assert resolve_rho(cfg, toy_dataset.images) is cfg
    scaled = resolve_rho(GuidanceConfig(rho_fraction=0.5), toy_dataset.images)
    assert 0.0 < scaled.rho < 200.0


def test_margin_above_bank_distances_keeps_every_update(denoiser, classifier, guide, short_schedule, toy_dataset):
    cfg = GuidanceConfig(i=-1e9, image_guidance=False, grad_window=3, rho=100.0, nu=0.5, s=2.0, adversarial=False)
    bank = MemoryBank()
    for k in range(3):
        bank.insert(guide.label, toy_dataset[k].image)
    image, events = run(denoiser, classifier, guide, cfg, short_schedule, bank=bank.snapshot())
    frame = events.to_frame().iloc[:3]
    assert (frame["l_contra"] > 0).all()
    assert (frame["grad_norm"] > 0).all()
    assert events.skipped_updates == 0

    off = cfg.model_copy(update={"contrastive": False})
    plain, _ = run(denoiser, classifier, guide, off, short_schedule, bank=bank.snapshot())
    assert not np.array_equal(image.data, plain.data)


def test_calibrated_margin_exceeds_typical_distances(toy_dataset):
    cfg = resolve_rho(GuidanceConfig(rho_fraction=2.0), toy_dataset.images)
    assert cfg.rho == pytest.approx(2.0 * mean_pairwise_distance(list(toy_dataset.images)), rel=1e-12)
