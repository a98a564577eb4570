"""
Invariant suite behind ``verify``.

Fast checks exercise every analytic identity, the gradient oracle and the
Monte Carlo marginals on tiny models. ``--full`` adds the behavioural checks
that need a (briefly) trained denoiser and classifier.
"""

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from active.loop import adversarial_probability, partition_indices
from classifier.mining import EvalReport, find_hard_samples
from classifier.model import ClassifierArch, ConvClassifier
from classifier.training import classifier_loss, train_classifier_epoch
from diffusion.denoiser import ConditionalDenoiser, DenoiserArch
from diffusion.sampler import cfg_noise, ddpm_step, sample
from diffusion.schedule import LatentState, NoiseSchedule, build_schedule, forward_sample, x0_estimate
from diffusion.training import denoiser_loss, train_denoiser
from guidance.generator import generate_plain, guided_generate, resolve_rho
from guidance.image_guidance import (
    AttentionMask,
    apply_attentive_guidance,
    apply_image_guidance,
    extract_mask,
    gamma_schedule,
    guide_target,
    mask_iou,
)
from guidance.losses import (
    adversarial_loss,
    confidence_to_guidance,
    contrastive_loss,
    mean_pairwise_distance,
    update_embedding,
)
from guidance.memory_bank import MemoryBank
from numerics import ops
from numerics.gradcheck import finite_diff_grad, relative_error
from numerics.rng import make_rng, rng_gaussian
from numerics.tensor import Tape, Tensor
from shapes.dataset import generate_shapes_dataset
from shapes.images import encode_image
from shapes.storage import decode_dataset, encode_dataset
from shared.config import ExperimentConfig, GuidanceConfig, ShapeDatasetSpec, parse_config_text
from shared.errors import ActGenError, ConfigError, DatasetChecksumError, ShapeError, TapeError
from shared.log import log

TINY_DENOISER = DenoiserArch(image_channels=1, image_size=8, num_classes=3, embed_dim=4, channels=4, heads=2, time_dim=4)
TINY_CLASSIFIER = ClassifierArch(image_channels=1, image_size=8, num_classes=3, width1=3, width2=4)
MIN_MASK_IOU = 0.3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


_REGISTRY: List[Tuple[str, bool, Callable[[int], None]]] = []


def check(name: str, slow: bool = False):
    def register(fn: Callable[[int], None]):
        _REGISTRY.append((name, slow, fn))
        return fn

    return register


def _raises(exc_type, fn, *args, **kwargs) -> None:
    try:
        fn(*args, **kwargs)
    except exc_type:
        return
    raise AssertionError(f"{fn.__name__} did not raise {exc_type.__name__}")


def _tiny_models(seed: int):
    denoiser = ConditionalDenoiser.create(TINY_DENOISER, make_rng(seed, "verify", 1))
    classifier = ConvClassifier.create(TINY_CLASSIFIER, make_rng(seed, "verify", 2))
    return denoiser, classifier


def _oracle(loss_of: Callable[[Tensor], Tensor], x: Tensor, coords=None) -> float:
    """Relative error between tape gradient and central differences."""
    with Tape() as tape:
        tape.watch(x)
        loss = loss_of(x)
    auto = tape.backward(loss)[x].data.reshape(-1)
    numeric = finite_diff_grad(lambda v: loss_of(v).item(), x, coords=coords).data.reshape(-1)
    if coords is not None:
        auto, numeric = auto[list(coords)], numeric[list(coords)]
    return relative_error(auto, numeric)


# ---------------------------------------------------------------- numerics


@check("tensor ops")
def _tensor_ops(seed: int) -> None:
    assert np.array_equal(ops.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [3.0, 8.0])
    assert np.array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    assert ops.l2_norm(Tensor([3.0, 4.0])).item() == 5.0
    a = Tensor(make_rng(seed, "verify", 3).standard_normal((3, 4)))
    before = a.data.copy()
    ops.matmul(a, Tensor(np.ones((4, 2))))
    ops.softmax(a)
    assert np.array_equal(a.data, before)
    _raises(ShapeError, ops.add, Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


@check("autodiff")
def _autodiff(seed: int) -> None:
    with Tape() as tape:
        x = tape.watch(Tensor(3.0))
        y = tape.watch(Tensor([1.0, 2.0]))
        unused = tape.watch(Tensor([5.0]))
        loss = ops.add(ops.mul(x, x), ops.mul(ops.l2_norm(y), ops.l2_norm(y)))
    grads = tape.backward(loss)
    assert grads[x].item() == 6.0
    np.testing.assert_allclose(grads[y].data, [2.0, 4.0], rtol=1e-12)
    assert np.array_equal(grads[unused].data, [0.0])
    _raises(TapeError, tape.backward, y)


@check("finite differences")
def _finite_diff(seed: int) -> None:
    g = finite_diff_grad(lambda v: float((v.data**2).sum()), Tensor(3.0))
    assert abs(g.item() - 6.0) <= 1e-8
    g = finite_diff_grad(lambda v: float((v.data**3).sum()), Tensor([1.0, 2.0]))
    np.testing.assert_allclose(g.data, [3.0, 12.0], atol=1e-6)


@check("rng streams")
def _rng(seed: int) -> None:
    a, b = make_rng(seed, "verify", 4), make_rng(seed, "verify", 4)
    first = rng_gaussian(a, (5,))
    assert np.array_equal(first.data, rng_gaussian(b, (5,)).data)
    assert not np.array_equal(first.data, rng_gaussian(a, (5,)).data)
    draws = rng_gaussian(make_rng(seed, "verify", 5), (100_000,)).data
    assert abs(draws.mean()) < 0.02 and abs(draws.var() - 1.0) < 0.02


# ---------------------------------------------------------------- diffusion


@check("schedule invariants")
def _schedule(seed: int) -> None:
    for sched in (build_schedule("linear", 40), build_schedule("cosine", 100), build_schedule("linear", 1, 0.1, 0.1)):
        assert len(sched) == sched.T
        assert np.all((sched.beta[1:] > 0) & (sched.beta[1:] < 1))
        assert np.array_equal(sched.alpha, 1.0 - sched.beta)
        for t in range(1, sched.T + 1):
            assert sched.alpha_bar[t] == sched.alpha_bar[t - 1] * sched.alpha[t]
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert sched.sigma[1] == 0.0 and np.all(sched.sigma >= 0)
    assert abs(build_schedule("linear", 1, 0.1, 0.1).alpha_bar[1] - 0.9) < 1e-15


@check("forward marginal (Monte Carlo)")
def _forward_marginal(seed: int) -> None:
    sched = build_schedule("linear", 40)
    x0 = Tensor([0.7, -0.3])
    rng = make_rng(seed, "verify", 6)
    n = 100_000
    for t in (1, 20, 40):
        eps = rng.standard_normal((n, 2))
        ab = sched.alpha_bar[t]
        xt = np.sqrt(ab) * x0.data + np.sqrt(1 - ab) * eps
        se_mean = np.sqrt((1 - ab) / n)
        assert np.all(np.abs(xt.mean(axis=0) - np.sqrt(ab) * x0.data) < 3 * se_mean)
        se_var = (1 - ab) * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(xt.var(axis=0, ddof=1) - (1 - ab)) < 3 * se_var)
        one = forward_sample(x0, t, Tensor(eps[0]), sched)
        np.testing.assert_allclose(one.data, xt[0], rtol=0, atol=1e-15)


@check("x0 round trip, cfg limits, ddpm step")
def _diffusion_identities(seed: int) -> None:
    sched = build_schedule("linear", 40)
    rng = make_rng(seed, "verify", 7)
    x0, eps = rng_gaussian(rng, (1, 4, 4)), rng_gaussian(rng, (1, 4, 4))
    for t in (1, 10, 40):
        back = x0_estimate(LatentState(forward_sample(x0, t, eps, sched), t), eps, sched)
        assert np.max(np.abs(back.data - x0.data)) <= 1e-10
    ec, eu = rng_gaussian(rng, (3,)), rng_gaussian(rng, (3,))
    assert np.allclose(cfg_noise(ec, eu, 1.0).data, ec.data, atol=1e-15)
    assert np.array_equal(cfg_noise(ec, eu, 0.0).data, eu.data)
    flat = NoiseSchedule.from_betas([0.0, 0.1], strict=False)
    x = rng_gaussian(rng, (3,))
    assert np.array_equal(ddpm_step(LatentState(x, 1), eu, ec, flat).x.data, x.data)
    _raises(ActGenError, ddpm_step, LatentState(x, 0), eu, ec, sched)


@check("sampler determinism and s=0 condition invariance")
def _sampler(seed: int) -> None:
    denoiser, _ = _tiny_models(seed)
    sched = build_schedule("linear", 4, 0.05, 0.3)
    a = sample(denoiser, denoiser.embed_class(0), sched, make_rng(seed, "verify", 8))
    b = sample(denoiser, denoiser.embed_class(0), sched, make_rng(seed, "verify", 8))
    assert np.array_equal(a.data, b.data)
    c0 = sample(denoiser, denoiser.embed_class(0), sched, make_rng(seed, "verify", 9), s=0.0)
    c1 = sample(denoiser, denoiser.embed_class(2), sched, make_rng(seed, "verify", 9), s=0.0)
    assert np.array_equal(c0.data, c1.data)
    _, attn = denoiser.predict_noise(a, denoiser.embed_class(1), 2)
    assert attn.shape == (1, 8, 8) and np.all((attn.data > 0.0) & (attn.data < 1.0))


@check("denoiser loss gradient")
def _denoiser_grad(seed: int) -> None:
    denoiser, _ = _tiny_models(seed)
    sched = build_schedule("linear", 10, 0.01, 0.3)
    rng = make_rng(seed, "verify", 10)
    x0 = rng.uniform(-1, 1, (4, 1, 8, 8))
    labels, t = np.array([0, 1, 2, 0]), np.array([1, 4, 7, 10])
    eps, drop = rng.standard_normal(x0.shape), np.array([False, True, False, False])
    for name in ("conv_in_w", "attn_k", "class_emb", "time_w1", "conv_out_b"):
        def loss_of(w, name=name):
            return denoiser_loss({**denoiser.params, name: w}, TINY_DENOISER, x0, labels, t, eps, drop, sched)

        p = denoiser.params[name]
        coords = rng.choice(p.size, size=min(p.size, 6), replace=False)
        assert _oracle(loss_of, p, coords) <= 1e-5, name


# ---------------------------------------------------------------- guidance


@check("gamma schedule and guide target")
def _gamma(seed: int) -> None:
    assert gamma_schedule(12.5, 12.5) == 0.5
    assert abs(gamma_schedule(12.5 + np.log(3.0), 12.5) - 0.25) < 1e-15
    assert abs(gamma_schedule(40, 12.5) - np.exp(-27.5) / (1 + np.exp(-27.5))) < 1e-25
    values = [gamma_schedule(t, 12.5) for t in range(0, 41)]
    assert all(0 < v < 1 for v in values) and all(a > b for a, b in zip(values, values[1:]))
    sched = NoiseSchedule.from_betas([0.0, 0.2], strict=False)
    g = Tensor([0.5, -1.0])
    assert np.array_equal(guide_target(g, 1, Tensor([3.0, 3.0]), sched).data, g.data)


@check("attentive guidance identities")
def _attentive(seed: int) -> None:
    rng = make_rng(seed, "verify", 11)
    x, g = rng_gaussian(rng, (2, 4, 4)), rng_gaussian(rng, (2, 4, 4))
    for gamma in (0.0, 0.3, 1.0):
        plain = apply_image_guidance(x, g, gamma)
        assert np.array_equal(apply_attentive_guidance(x, g, gamma, AttentionMask.ones(4, 4)).data, plain.data)
        zero = AttentionMask(Tensor(np.zeros((1, 4, 4))))
        assert np.array_equal(apply_attentive_guidance(x, g, gamma, zero).data, x.data)
    assert np.array_equal(apply_image_guidance(x, g, 0.0).data, x.data)
    assert np.array_equal(apply_image_guidance(x, g, 1.0).data, g.data)
    half = np.zeros((1, 4, 4))
    half[:, :2] = 1.0
    out = apply_attentive_guidance(x, g, 0.4, AttentionMask(Tensor(half))).data
    assert np.array_equal(out[:, :2], apply_image_guidance(x, g, 0.4).data[:, :2])
    assert np.array_equal(out[:, 2:], x.data[:, 2:])
    _raises(ActGenError, apply_image_guidance, x, g, 1.5)


@check("mask extraction")
def _masks(seed: int) -> None:
    attn = Tensor(np.full((1, 4, 4), 1 / 16))
    assert np.array_equal(extract_mask(attn, "attention").m.data, np.ones((1, 4, 4)))
    assert np.array_equal(extract_mask(attn, "none").m.data, np.ones((1, 4, 4)))
    _raises(ActGenError, extract_mask, attn, "ground_truth")
    ramp = Tensor(np.linspace(0, 1, 16).reshape(1, 4, 4))
    m = extract_mask(ramp, "attention").m.data
    assert m.min() == 0.0 and m.max() == 1.0


@check("contrastive loss")
def _contrastive(seed: int) -> None:
    x = Tensor(np.zeros(2))
    assert contrastive_loss(x, [Tensor([150.0, 0.0])], 200.0).item() == 50.0
    assert contrastive_loss(x, [Tensor([300.0, 0.0]), Tensor([0.0, 200.0])], 200.0).item() == 0.0
    assert contrastive_loss(x, [], 200.0).item() == 0.0
    rng = make_rng(seed, "verify", 12)
    for _ in range(10):
        bank = [Tensor(rng.standard_normal(6)) for _ in range(2)]
        point = Tensor(rng.standard_normal((1, 2, 3)))
        assert _oracle(lambda v: contrastive_loss(v, bank, 5.0), point) <= 1e-6


@check("adversarial loss")
def _adversarial(seed: int) -> None:
    denoiser, classifier = _tiny_models(seed)
    zero_head = {**classifier.params, "fc_w": Tensor(np.zeros((4, 3))), "fc_b": Tensor(np.zeros(3))}
    uniform = ConvClassifier(zero_head, TINY_CLASSIFIER)
    sched = build_schedule("linear", 10, 0.01, 0.3)
    rng = make_rng(seed, "verify", 13)
    x_t = rng_gaussian(rng, (1, 8, 8))
    loss = adversarial_loss(LatentState(x_t, 5), rng_gaussian(rng, (1, 8, 8)), sched, uniform, 1)
    assert abs(loss.item() + np.log(3.0)) < 1e-12
    null = denoiser.embed_class(None)
    eps_u, _ = denoiser.predict_noise(x_t, null, 5)
    cond = denoiser.embed_class(2)

    def chain(vec):
        eps_c, _ = denoiser.predict_noise(x_t, cond.replace_vec(vec), 5)
        return adversarial_loss(LatentState(x_t, 5), cfg_noise(eps_c, eps_u, 3.0), sched, classifier, 2)

    assert _oracle(chain, cond.vec) <= 1e-5


@check("embedding update")
def _update(seed: int) -> None:
    denoiser, _ = _tiny_models(seed)
    cond = denoiser.embed_class(0)
    grad = Tensor([0.3, -1.0, 2.0, 0.5])
    a, skipped = update_embedding(cond, grad, 0.1)
    b, _ = update_embedding(cond, ops.scale(grad, 10.0), 0.1)
    assert not skipped and abs(np.linalg.norm(a.vec.data - cond.vec.data) - 0.1) <= 1e-12
    assert np.allclose(a.vec.data, b.vec.data, atol=1e-15)
    same, skipped = update_embedding(cond, Tensor(np.zeros(4)), 0.1)
    assert skipped and same is cond
    c, _ = update_embedding(cond, grad, 0.0)
    assert np.array_equal(c.vec.data, cond.vec.data)


@check("confidence to guidance")
def _eta(seed: int) -> None:
    assert confidence_to_guidance(0.5) == 20.0
    assert abs(confidence_to_guidance(1.0) - (30 / (1 + np.exp(5)) + 5)) < 1e-12
    assert abs(confidence_to_guidance(0.0) - (30 / (1 + np.exp(-5)) + 5)) < 1e-12


@check("memory bank")
def _bank(seed: int) -> None:
    bank = MemoryBank(capacity=2)
    for v in (1.0, 2.0, 3.0):
        bank.insert(0, Tensor([v, v]))
    assert [e.data[0] for e in bank.entries(0)] == [2.0, 3.0] and bank.size(1) == 0
    rng = make_rng(seed, "verify", 14)
    assert bank.sample(1, 1024, rng) == [] and len(bank.sample(0, 1024, rng)) == 2
    big = MemoryBank()
    for k in range(1100):
        big.insert(3, Tensor([float(k)]))
    picked = big.sample(3, 1024, rng)
    assert len(picked) == 1024 and len({p.data[0] for p in picked}) == 1024


@check("guidance vanishes without strength")
def _vanishing(seed: int) -> None:
    denoiser, classifier = _tiny_models(seed)
    sched = build_schedule("linear", 4, 0.05, 0.3)
    cfg = GuidanceConfig(i=-1e9, grad_window=0, s=2.0)
    guide = Tensor(make_rng(seed, "verify", 15).uniform(-1, 1, (1, 8, 8)))
    guided, events = guided_generate(
        denoiser, classifier, guide, 1, cfg, MemoryBank(), sched, make_rng(seed, "verify", 16), adversarial=False
    )
    plain = generate_plain(denoiser, 1, sched, make_rng(seed, "verify", 16), s=2.0)
    assert np.array_equal(guided.data, plain.data) and len(events) == 4


# ---------------------------------------------------------------- classifier / loop / data


@check("classifier gradient and training")
def _classifier(seed: int) -> None:
    _, classifier = _tiny_models(seed)
    rng = make_rng(seed, "verify", 17)
    x, y = rng.uniform(-1, 1, (4, 1, 8, 8)), np.array([0, 1, 2, 1])
    for name in ("conv1_w", "conv2_b", "fc_w"):
        p = classifier.params[name]
        coords = rng.choice(p.size, size=min(p.size, 6), replace=False)
        assert _oracle(lambda w, n=name: classifier_loss({**classifier.params, n: w}, x, y), p, coords) <= 1e-5
    same, _ = train_classifier_epoch(classifier, x, y, 0.0, make_rng(seed, "verify", 18))
    assert all(np.array_equal(same.params[k].data, v.data) for k, v in classifier.params.items())


@check("hard-sample rules")
def _mining(seed: int) -> None:
    frame = pd.DataFrame(
        {"index": [0, 1, 2], "label": [0, 1, 2], "predicted": [0, 2, 2], "confidence": [0.9, 0.3, 0.15]}
    )
    report = EvalReport(accuracy=2 / 3, per_sample=frame)
    assert find_hard_samples(report, "misclassified") == [1]
    assert find_hard_samples(report, "confidence_below", 0.2) == [2]
    assert find_hard_samples(report, "confidence_below", 0.5) == [1, 2]
    _raises(ConfigError, find_hard_samples, report, "confidence_below", 0.0)


@check("partition and adversarial curriculum")
def _loop(seed: int) -> None:
    labels = np.repeat(np.arange(4), [30, 20, 25, 25])
    train, val = partition_indices(labels, 17, seed)
    assert len(np.intersect1d(train, val)) == 0 and len(train) + len(val) == 100
    for c, n_c in zip(range(4), (30, 20, 25, 25)):
        assert abs((labels[val] == c).sum() - 17 * n_c / 100) <= 1
    assert adversarial_probability(0, 20) == 0.0 and adversarial_probability(20, 20) == 0.5
    p = adversarial_probability(10, 20)
    draws = make_rng(seed, "verify", 19).random(4000) < p
    assert abs(draws.mean() - p) <= 3 * np.sqrt(p * (1 - p) / 4000)


@check("dataset and image formats")
def _formats(seed: int) -> None:
    spec = ShapeDatasetSpec(samples_per_class=3, seed=seed)
    data = generate_shapes_dataset(spec)
    again = generate_shapes_dataset(spec)
    assert np.array_equal(data.images, again.images) and data.class_counts() == [3, 3, 3, 3]
    blob = encode_dataset(data)
    back = decode_dataset(blob)
    assert np.array_equal(back.images, data.images) and np.array_equal(back.masks, data.masks)
    corrupted = bytearray(blob)
    corrupted[-1] ^= 0xFF
    _raises(DatasetChecksumError, decode_dataset, bytes(corrupted))
    img = encode_image(Tensor(np.array([[[-1.0, 0.0], [1.0, 0.5]]])))
    assert img == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 191])


@check("config parsing")
def _config(seed: int) -> None:
    cfg = parse_config_text("")
    assert cfg == ExperimentConfig() and cfg.guidance.i == 12.5 and cfg.guidance.n_cap == 1024
    try:
        parse_config_text("guidance.rho=-1")
    except ConfigError as exc:
        assert "rho" in str(exc)
    else:
        raise AssertionError("rho=-1 accepted")


# ---------------------------------------------------------------- behaviour (--full)


def _pilot(seed: int):
    """Small trained denoiser and classifier on 8x8 shapes."""
    spec = ShapeDatasetSpec(image_size=8, num_classes=3, samples_per_class=60, base_scale=0.3, position_jitter=0.5, seed=seed)
    data = generate_shapes_dataset(spec)
    sched = build_schedule("linear", 10, 0.01, 0.4)
    denoiser, classifier = _tiny_models(seed)
    arch = DenoiserArch(image_channels=1, image_size=8, num_classes=3, embed_dim=8, channels=8, heads=2, time_dim=8)
    denoiser = ConditionalDenoiser.create(arch, make_rng(seed, "verify", 20))
    denoiser, losses = train_denoiser(
        denoiser, data.images, data.labels, sched, 25, 0.1, make_rng(seed, "verify", 21), batch_size=32, lr=3e-3,
        masks=data.masks, attn_weight=1.0,
    )
    rng = make_rng(seed, "verify", 22)
    for _ in range(10):
        classifier, _ = train_classifier_epoch(classifier, data.images, data.labels, 0.05, rng)
    return data, sched, denoiser, classifier, losses


_pilot_cache: Dict[int, tuple] = {}


def _pilot_cached(seed: int):
    if seed not in _pilot_cache:
        _pilot_cache[seed] = _pilot(seed)
    return _pilot_cache[seed]


@check("denoiser training reduces loss", slow=True)
def _training_curve(seed: int) -> None:
    *_, losses = _pilot_cached(seed)
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


@check("attention masks locate the foreground", slow=True)
def _mask_quality(seed: int) -> None:
    data, sched, denoiser, *_ = _pilot_cached(seed)
    rng = make_rng(seed, "verify", 23)
    ious = []
    for k in range(50):
        idx = k * 7 % len(data)
        image, mask = Tensor(data.images[idx]), Tensor(data.masks[idx])
        x_t = forward_sample(image, 1, rng_gaussian(rng, image.shape), sched)
        _, attn = denoiser.predict_noise(x_t, denoiser.embed_class(int(data.labels[idx])), 1)
        ious.append(mask_iou(extract_mask(attn, "attention"), mask))
    assert np.mean(ious) >= MIN_MASK_IOU, f"mean IoU {np.mean(ious):.3f}"


@check("guided samples stay closer to the guide", slow=True)
def _closeness(seed: int) -> None:
    data, sched, denoiser, classifier, _ = _pilot_cached(seed)
    cfg = GuidanceConfig(i=sched.T / 3.0, grad_window=0, s=3.0, mask_mode="attention")
    guided_d, plain_d, fg_change, bg_change = [], [], [], []
    for k in range(20):
        idx = k * 9 % len(data)
        guide, y, mask = Tensor(data.images[idx]), int(data.labels[idx]), data.masks[idx]
        img, _ = guided_generate(
            denoiser, classifier, guide, y, cfg, MemoryBank(), sched, make_rng(seed, "verify", 100 + k),
            adversarial=False,
        )
        plain = generate_plain(denoiser, y, sched, make_rng(seed, "verify", 100 + k), s=3.0)
        guided_d.append(np.linalg.norm(img.data - guide.data))
        plain_d.append(np.linalg.norm(plain.data - guide.data))
        change = np.abs(img.data - plain.data)
        fg_change.append(change[:, mask[0] > 0.5].mean())
        bg_change.append(change[:, mask[0] < 0.5].mean())
    assert np.mean(guided_d) < np.mean(plain_d)
    assert np.mean(bg_change) < np.mean(fg_change)


@check("contrastive guidance increases diversity", slow=True)
def _diversity(seed: int) -> None:
    data, sched, denoiser, classifier, _ = _pilot_cached(seed)
    guide = Tensor(data.images[0])
    y = int(data.labels[0])
    base = GuidanceConfig(i=-1e9, image_guidance=False, grad_window=sched.T, rho_fraction=2.0, nu=0.5, s=3.0,
                          adversarial=False)
    base = resolve_rho(base, data.images)
    spread, active = {}, 0
    for contrastive in (False, True):
        cfg = base.model_copy(update={"contrastive": contrastive})
        bank = MemoryBank()
        outs = []
        for k in range(50):
            image, events = guided_generate(denoiser, classifier, guide, y, cfg, bank, sched,
                                            make_rng(seed, "verify", 200 + k), bank_rng=make_rng(seed, "verify", 300 + k))
            outs.append(image.data)
            active += sum(1 for row in events.rows if row.l_contra > 0.0 and not row.skipped_update)
        spread[contrastive] = mean_pairwise_distance(outs)
    assert active > 0, "contrastive hinge never active"
    assert spread[True] > spread[False], f"spread {spread[True]:.3f} <= {spread[False]:.3f}"


@check("adversarial guidance raises classifier loss", slow=True)
def _adversarial_effect(seed: int) -> None:
    data, sched, denoiser, classifier, _ = _pilot_cached(seed)
    cfg = GuidanceConfig(i=sched.T / 3.0, grad_window=sched.T, contrastive=False, nu=0.5, s=3.0, mask_mode="none")
    ce = {False: [], True: []}
    for k in range(50):
        idx = k * 7 % len(data)
        guide, y = Tensor(data.images[idx]), int(data.labels[idx])
        for adv in (False, True):
            img, _ = guided_generate(denoiser, classifier, guide, y, cfg, MemoryBank(), sched,
                                     make_rng(seed, "verify", 400 + k), adversarial=adv)
            ce[adv].append(ops.cross_entropy(classifier.logits(ops.reshape(img, (1,) + img.shape)), np.array([y])).item())
    assert np.median(ce[True]) > np.median(ce[False])


def run_checks(full: bool = False, seed: int = 0) -> List[CheckResult]:
    results = []
    for name, slow, fn in _REGISTRY:
        if slow and not full:
            continue
        start = time.perf_counter()
        try:
            fn(seed)
            passed, detail = True, ""
        except Exception as exc:  # every failure is reported, none aborts the suite
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, passed, detail, time.perf_counter() - start))
        log("Verify", f"{'PASS' if passed else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
    return results


def results_frame(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([r.__dict__ for r in results], columns=["name", "passed", "detail", "seconds"])
