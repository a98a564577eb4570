"""Image guidance: strength schedule, masks and the blending identities."""

import numpy as np
import pytest

from diffusion.schedule import NoiseSchedule, build_schedule
from guidance.image_guidance import (
    AttentionMask,
    apply_attentive_guidance,
    apply_image_guidance,
    extract_mask,
    gamma_schedule,
    guide_target,
    mask_iou,
)
from numerics.rng import rng_gaussian
from numerics.tensor import Tensor
from shared.errors import GuidanceError, ShapeError


def test_gamma_midpoint_and_offsets():
    assert gamma_schedule(12.5, 12.5) == 0.5
    assert gamma_schedule(12.5 + np.log(3.0), 12.5) == pytest.approx(0.25, abs=1e-15)
    assert gamma_schedule(40, 12.5) == pytest.approx(np.exp(-27.5) / (1 + np.exp(-27.5)), rel=1e-12)


def test_gamma_is_decreasing_in_t_and_never_overflows():
    values = [gamma_schedule(t, 12.5) for t in range(0, 41)]
    assert all(0.0 < v < 1.0 for v in values)
    assert all(a > b for a, b in zip(values, values[1:]))
    assert gamma_schedule(1, -1e9) == 0.0
    assert gamma_schedule(40, 1e9) == 1.0


def test_guide_target_is_exact_without_noise():
    sched = NoiseSchedule.from_betas([0.0, 0.2], strict=False)
    g = Tensor([0.5, -1.0])
    assert np.array_equal(guide_target(g, 1, Tensor([3.0, -3.0]), sched).data, g.data)


def test_guide_target_uses_the_noise_draw(rng):
    sched = build_schedule("linear", 10)
    g, z = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    a = guide_target(g, 6, z, sched)
    b = guide_target(g, 6, Tensor(np.zeros((1, 4, 4))), sched)
    np.testing.assert_allclose(a.data - b.data, sched.sigma[6] * z.data, atol=1e-12)


def test_image_guidance_extremes(rng):
    x, g = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    assert np.array_equal(apply_image_guidance(x, g, 0.0).data, x.data)
    assert np.array_equal(apply_image_guidance(x, g, 1.0).data, g.data)
    mid = apply_image_guidance(x, g, 0.5).data
    np.testing.assert_allclose(mid, 0.5 * (x.data + g.data), atol=1e-15)


def test_repel_moves_away_from_the_guide(rng):
    x, g = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    out = apply_image_guidance(x, g, 0.3, sign="repel")
    assert np.linalg.norm(out.data - g.data) > np.linalg.norm(x.data - g.data)


def test_guidance_rejects_bad_gamma_and_shapes(rng):
    x = rng_gaussian(rng, (1, 4, 4))
    with pytest.raises(GuidanceError):
        apply_image_guidance(x, x, 1.5)
    with pytest.raises(ShapeError):
        apply_image_guidance(x, Tensor(np.zeros((1, 2, 2))), 0.5)


@pytest.mark.parametrize("gamma", [0.0, 0.3, 0.77, 1.0])
def test_attentive_guidance_reduces_to_image_guidance(gamma, rng):
    x, g = rng_gaussian(rng, (3, 4, 4)), rng_gaussian(rng, (3, 4, 4))
    full = apply_attentive_guidance(x, g, gamma, AttentionMask.ones(4, 4))
    assert np.array_equal(full.data, apply_image_guidance(x, g, gamma).data)
    none = apply_attentive_guidance(x, g, gamma, AttentionMask(Tensor(np.zeros((1, 4, 4)))))
    assert np.array_equal(none.data, x.data)


def test_attentive_guidance_only_touches_masked_pixels(rng):
    x, g = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    m = np.zeros((1, 4, 4))
    m[0, 1:3, 1:3] = 1.0
    out = apply_attentive_guidance(x, g, 0.6, AttentionMask(Tensor(m))).data
    inside = m[0] > 0
    assert np.array_equal(out[0][~inside], x.data[0][~inside])
    assert np.array_equal(out[0][inside], apply_image_guidance(x, g, 0.6).data[0][inside])


def test_attention_mask_validation():
    with pytest.raises(ShapeError):
        AttentionMask(Tensor(np.ones((4, 4))))
    with pytest.raises(GuidanceError):
        AttentionMask(Tensor(np.full((1, 2, 2), 1.5)))


def test_flat_attention_gives_full_mask():
    attn = Tensor(np.full((1, 4, 4), 1 / 16))
    assert np.array_equal(extract_mask(attn, "attention").m.data, np.ones((1, 4, 4)))


def test_attention_mask_thresholds():
    attn = Tensor(np.linspace(0.0, 1.0, 11).reshape(1, 1, 11))
    m = extract_mask(attn, "attention").m.data[0, 0]
    assert np.all(m[:3] == 0.0)  # normalised value below 0.3
    assert np.all(m[8:] == 1.0)  # normalised value above 0.7
    assert m[5] == pytest.approx(0.5, abs=1e-12)


def test_mask_modes():
    attn = Tensor(np.random.default_rng(0).random((1, 3, 3)))
    assert np.array_equal(extract_mask(attn, "none").m.data, np.ones((1, 3, 3)))
    gt = Tensor(np.eye(3)[None])
    assert np.array_equal(extract_mask(attn, "ground_truth", gt).m.data, gt.data)
    with pytest.raises(GuidanceError):
        extract_mask(attn, "ground_truth")
    with pytest.raises(GuidanceError):
        extract_mask(attn, "saliency")


def test_mask_iou():
    gt = Tensor(np.array([[[1.0, 1.0], [0.0, 0.0]]]))
    assert mask_iou(AttentionMask(gt), gt) == 1.0
    half = AttentionMask(Tensor(np.array([[[1.0, 0.0], [1.0, 0.0]]])))
    assert mask_iou(half, gt) == pytest.approx(1 / 3)
    empty = Tensor(np.zeros((1, 2, 2)))
    assert mask_iou(AttentionMask(empty), empty) == 1.0
