"""Noise schedules, forward process, reverse steps, sampler and denoiser training."""

import numpy as np
import pytest

from diffusion.schedule import LatentState, NoiseSchedule, build_schedule, forward_sample, x0_estimate
from diffusion.sampler import cfg_noise, ddpm_step, sample
from diffusion.denoiser import denoiser_forward
from diffusion.training import condition_table, denoiser_loss, train_denoiser
from guidance.image_guidance import extract_mask, mask_iou
from numerics import ops
from numerics.gradcheck import finite_diff_grad, relative_error
from numerics.rng import make_rng, rng_gaussian
from numerics.tensor import Tape, Tensor
from shared.errors import ActGenError, GuidanceError, ScheduleError, ShapeError

from conftest import TINY_DENOISER


@pytest.mark.parametrize("kind,T", [("linear", 40), ("linear", 100), ("cosine", 40), ("cosine", 100)])
def test_schedule_invariants(kind, T):
    sched = build_schedule(kind, T)
    assert len(sched) == T
    assert sched.alpha_bar[0] == 1.0
    assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] < 1))
    for t in range(1, T + 1):
        assert sched.alpha_bar[t] == sched.alpha_bar[t - 1] * sched.alpha[t]
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert sched.sigma[1] == 0.0
    assert np.all(sched.sigma >= 0.0)


def test_single_step_schedule():
    sched = build_schedule("linear", 1, 0.1, 0.1)
    assert sched.alpha_bar[1] == pytest.approx(0.9, abs=1e-15)


def test_schedule_rejects_bad_parameters():
    with pytest.raises(ScheduleError):
        build_schedule("linear", 0)
    with pytest.raises(ScheduleError):
        build_schedule("linear", 10, 0.2, 0.1)
    with pytest.raises(ScheduleError):
        NoiseSchedule.from_betas([0.1, 1.0])
    with pytest.raises(ScheduleError):
        build_schedule("quadratic", 10)


def test_forward_sample_edges():
    sched = build_schedule("linear", 40)
    x0, eps = Tensor([0.3, -0.7]), Tensor([1.0, 2.0])
    assert np.array_equal(forward_sample(x0, 0, eps, sched).data, x0.data)
    with pytest.raises(ScheduleError):
        forward_sample(x0, 41, eps, sched)
    with pytest.raises(ShapeError):
        forward_sample(x0, 3, Tensor([1.0]), sched)


def test_forward_sample_takes_one_timestep_per_sample(rng):
    sched = build_schedule("linear", 40)
    x0, eps = rng_gaussian(rng, (3, 1, 2, 2)), rng_gaussian(rng, (3, 1, 2, 2))
    t = np.array([0, 5, 40])
    batch = forward_sample(x0, t, eps, sched).data
    for i, step in enumerate(t):
        single = forward_sample(Tensor(x0.data[i]), int(step), Tensor(eps.data[i]), sched).data
        np.testing.assert_allclose(batch[i], single, rtol=0, atol=1e-15)
    assert np.array_equal(batch[0], x0.data[0])
    with pytest.raises(ShapeError):
        forward_sample(x0, np.array([1, 2]), eps, sched)
    with pytest.raises(ScheduleError):
        forward_sample(x0, np.array([1, 2, 41]), eps, sched)


def test_forward_marginal_moments():
    sched = build_schedule("linear", 40)
    x0 = np.array([0.7, -0.3])
    rng = make_rng(2, "verify", 0)
    n = 100_000
    for t in (1, 20, 40):
        ab = sched.alpha_bar[t]
        eps = rng.standard_normal((n, 2))
        xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
        assert np.all(np.abs(xt.mean(axis=0) - np.sqrt(ab) * x0) < 3 * np.sqrt((1 - ab) / n))
        assert np.all(np.abs(xt.var(axis=0, ddof=1) - (1 - ab)) < 3 * (1 - ab) * np.sqrt(2.0 / (n - 1)))


def test_x0_estimate_inverts_forward_sample(rng):
    sched = build_schedule("linear", 40)
    x0, eps = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    for t in (1, 17, 40):
        x_t = forward_sample(x0, t, eps, sched)
        back = x0_estimate(LatentState(x_t, t), eps, sched)
        assert np.max(np.abs(back.data - x0.data)) <= 1e-10


def test_cfg_limits(rng):
    ec, eu = rng_gaussian(rng, (5,)), rng_gaussian(rng, (5,))
    np.testing.assert_allclose(cfg_noise(ec, eu, 1.0).data, ec.data, rtol=0, atol=1e-15)
    assert np.array_equal(cfg_noise(ec, eu, 0.0).data, eu.data)
    np.testing.assert_allclose(cfg_noise(ec, eu, 15.0).data, eu.data + 15.0 * (ec.data - eu.data), atol=1e-12)


def test_ddpm_step_identity_with_zero_beta(rng):
    sched = NoiseSchedule.from_betas([0.0, 0.1], strict=False)
    x = rng_gaussian(rng, (3,))
    out = ddpm_step(LatentState(x, 1), rng_gaussian(rng, (3,)), rng_gaussian(rng, (3,)), sched)
    assert out.t == 0
    assert np.array_equal(out.x.data, x.data)


def test_ddpm_step_matches_posterior_mean(rng):
    sched = build_schedule("linear", 10)
    x, eps, z = rng_gaussian(rng, (4,)), rng_gaussian(rng, (4,)), rng_gaussian(rng, (4,))
    t = 6
    a, ab, s = sched.alpha[t], sched.alpha_bar[t], sched.sigma[t]
    expected = (x.data - (1 - a) / np.sqrt(1 - ab) * eps.data) / np.sqrt(a) + s * z.data
    np.testing.assert_allclose(ddpm_step(LatentState(x, t), eps, z, sched).x.data, expected, atol=1e-12)
    with pytest.raises(ScheduleError):
        ddpm_step(LatentState(x, 0), eps, z, sched)


def test_sample_is_deterministic(denoiser, short_schedule):
    cond = denoiser.embed_class(1)
    a = sample(denoiser, cond, short_schedule, make_rng(4, "demo", 0), s=3.0)
    b = sample(denoiser, cond, short_schedule, make_rng(4, "demo", 0), s=3.0)
    c = sample(denoiser, cond, short_schedule, make_rng(4, "demo", 1), s=3.0)
    assert a.shape == (1, 8, 8)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_sample_ignores_condition_without_guidance_scale(denoiser, short_schedule):
    a = sample(denoiser, denoiser.embed_class(0), short_schedule, make_rng(4, "demo", 2), s=0.0)
    b = sample(denoiser, denoiser.embed_class(2), short_schedule, make_rng(4, "demo", 2), s=0.0)
    assert np.array_equal(a.data, b.data)


def test_identity_hook_changes_nothing_and_sees_every_step(denoiser, short_schedule):
    steps = []

    def hook(ctx):
        steps.append((ctx.step, ctx.t))
        return ctx.x_prev, ctx.cond

    plain = sample(denoiser, denoiser.embed_class(1), short_schedule, make_rng(4, "demo", 3), s=2.0)
    hooked = sample(denoiser, denoiser.embed_class(1), short_schedule, make_rng(4, "demo", 3), s=2.0, step_hook=hook)
    assert np.array_equal(plain.data, hooked.data)
    assert steps == [(k, short_schedule.T - k) for k in range(short_schedule.T)]


def test_hook_returning_wrong_shape_is_rejected(denoiser, short_schedule):
    with pytest.raises(GuidanceError):
        sample(
            denoiser,
            denoiser.embed_class(1),
            short_schedule,
            make_rng(4, "demo", 4),
            step_hook=lambda ctx: (Tensor(np.zeros((1, 4, 4))), ctx.cond),
        )


def test_attention_map_is_a_per_pixel_probability(denoiser, rng):
    x = rng_gaussian(rng, (1, 8, 8))
    eps, attn = denoiser.predict_noise(x, denoiser.embed_class(2), 3)
    assert eps.shape == (1, 8, 8)
    assert attn.shape == (1, 8, 8)
    assert np.all((attn.data > 0.0) & (attn.data < 1.0))
    _, again = denoiser.predict_noise(x, denoiser.embed_class(2), 3)
    assert np.array_equal(attn.data, again.data)


def test_attention_map_is_differentiable_in_the_condition(denoiser, rng):
    x = rng_gaussian(rng, (1, 8, 8))
    weights = rng.standard_normal((1, 8, 8))
    cond = denoiser.embed_class(0)

    def weighted(vec):
        _, attn = denoiser.predict_noise(x, cond.replace_vec(vec), 4)
        return ops.sum(ops.mul(attn, Tensor(weights)))

    with Tape() as tape:
        vec = tape.watch(cond.vec)
        loss = weighted(vec)
    auto = tape.backward(loss)[vec].data
    numeric = finite_diff_grad(lambda v: weighted(v).item(), cond.vec).data
    assert relative_error(auto, numeric) <= 1e-5


def test_embed_class_validates_label(denoiser):
    null = denoiser.embed_class(None)
    assert null.null_flag and null.class_id is None
    with pytest.raises(ShapeError):
        denoiser.embed_class(3)


def test_condition_table_appends_null_row(denoiser):
    table = condition_table(denoiser.params)
    assert table.shape == (TINY_DENOISER.num_classes + 1, TINY_DENOISER.embed_dim)
    assert np.array_equal(table.data[-1], denoiser.params["null_emb"].data)


@pytest.mark.parametrize("name", ["conv_in_w", "attn_q", "class_emb", "null_emb", "time_w1", "conv_out_b"])
def test_denoiser_loss_gradient(denoiser, name):
    sched = build_schedule("linear", 10, 0.01, 0.3)
    rng = make_rng(8, "verify", 1)
    x0 = rng.uniform(-1, 1, (4, 1, 8, 8))
    labels, t = np.array([0, 1, 2, 0]), np.array([1, 4, 7, 10])
    eps = rng.standard_normal(x0.shape)
    drop = np.array([False, True, False, True])

    def loss_of(w):
        return denoiser_loss({**denoiser.params, name: w}, TINY_DENOISER, x0, labels, t, eps, drop, sched)

    p = denoiser.params[name]
    coords = rng.choice(p.size, size=min(p.size, 8), replace=False)
    with Tape() as tape:
        tape.watch(p)
        loss = loss_of(p)
    auto = tape.backward(loss)[p].data.reshape(-1)[coords]
    numeric = finite_diff_grad(lambda w: loss_of(w).item(), p, coords=coords).data.reshape(-1)[coords]
    assert relative_error(auto, numeric) <= 1e-5


def test_denoiser_loss_noises_through_forward_sample(denoiser):
    sched = build_schedule("linear", 10, 0.01, 0.3)
    rng = make_rng(8, "verify", 2)
    x0, eps = rng.uniform(-1, 1, (3, 1, 8, 8)), rng.standard_normal((3, 1, 8, 8))
    labels, t, drop = np.array([0, 1, 2]), np.array([2, 5, 9]), np.array([False, False, True])
    x_t = forward_sample(Tensor(x0), t, Tensor(eps), sched)
    ids = np.where(drop, TINY_DENOISER.num_classes, labels)
    eps_hat, _ = denoiser_forward(denoiser.params, TINY_DENOISER, x_t, ops.index(condition_table(denoiser.params), ids), t)
    expected = np.mean((eps_hat.data - eps) ** 2)
    loss = denoiser_loss(denoiser.params, TINY_DENOISER, x0, labels, t, eps, drop, sched)
    assert loss.item() == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("name", ["attn_q", "attn_k", "conv_mid_w", "class_emb"])
def test_attention_supervision_gradient(denoiser, toy_dataset, name):
    sched = build_schedule("linear", 10, 0.01, 0.3)
    rng = make_rng(8, "verify", 3)
    pick = np.array([0, 25, 50])
    x0, masks, labels = toy_dataset.images[pick], toy_dataset.masks[pick], toy_dataset.labels[pick]
    t, eps, drop = np.array([1, 3, 6]), rng.standard_normal(x0.shape), np.array([False, False, True])

    def loss_of(w):
        params = {**denoiser.params, name: w}
        return denoiser_loss(params, TINY_DENOISER, x0, labels, t, eps, drop, sched, masks, 2.0)

    p = denoiser.params[name]
    plain = denoiser_loss(denoiser.params, TINY_DENOISER, x0, labels, t, eps, drop, sched)
    assert loss_of(p).item() > plain.item()
    coords = rng.choice(p.size, size=min(p.size, 8), replace=False)
    with Tape() as tape:
        tape.watch(p)
        loss = loss_of(p)
    auto = tape.backward(loss)[p].data.reshape(-1)[coords]
    numeric = finite_diff_grad(lambda w: loss_of(w).item(), p, coords=coords).data.reshape(-1)[coords]
    assert relative_error(auto, numeric) <= 1e-5


def test_train_denoiser_validates_inputs(denoiser, short_schedule, rng):
    with pytest.raises(ActGenError):
        train_denoiser(denoiser, np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), short_schedule, 1, 0.1, rng)
    with pytest.raises(ActGenError):
        train_denoiser(denoiser, np.zeros((2, 1, 8, 8)), np.zeros(2, dtype=int), short_schedule, 1, 1.5, rng)


@pytest.mark.slow
def test_denoiser_training_reduces_loss(denoiser, toy_dataset):
    sched = build_schedule("linear", 10, 0.01, 0.4)
    _, history = train_denoiser(
        denoiser, toy_dataset.images, toy_dataset.labels, sched, 12, 0.1, make_rng(0, "diffusion-train"), batch_size=20
    )
    assert len(history) == 12
    assert np.mean(history[-3:]) < np.mean(history[:3])


def test_train_denoiser_needs_one_mask_per_image(denoiser, short_schedule, rng):
    with pytest.raises(ShapeError):
        train_denoiser(
            denoiser, np.zeros((2, 1, 8, 8)), np.zeros(2, dtype=int), short_schedule, 1, 0.1, rng,
            masks=np.zeros((3, 1, 8, 8)), attn_weight=1.0,
        )


@pytest.mark.slow
def test_supervised_attention_locates_the_foreground(denoiser, toy_dataset):
    sched = build_schedule("linear", 10, 0.01, 0.4)
    trained, _ = train_denoiser(
        denoiser, toy_dataset.images, toy_dataset.labels, sched, 40, 0.1, make_rng(0, "diffusion-train"),
        batch_size=20, lr=5e-3, masks=toy_dataset.masks, attn_weight=1.0,
    )
    rng = make_rng(0, "verify", 5)
    ious = []
    for sample in toy_dataset:
        x_t = forward_sample(sample.image, 1, rng_gaussian(rng, sample.image.shape), sched)
        _, attn = trained.predict_noise(x_t, trained.embed_class(sample.label), 1)
        ious.append(mask_iou(extract_mask(attn, "attention"), sample.gt_mask))
    assert np.mean(ious) >= 0.3
