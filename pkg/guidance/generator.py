"""
Guided generation: one DDPM run steered toward a real guide image.

Per reverse step (t = T..1), after the plain CFG/DDPM update:

  1. gamma_t from the sigmoid schedule; the sampled x_{t-1} is pulled toward
     the guide's x_{t-1}^(g) inside the attention mask;
  2. during the first ``grad_window`` steps the condition embedding takes a
     normalised gradient step on  L = L_contra + lambda * L_adv,
     where both losses are evaluated on the x0 estimate implied by the
     current embedding's noise prediction.

The sampler's noise stream is consumed exactly as in plain ``sample``, so a
guided and an unguided run with the same generator start from the same x_T and
share every z.
"""

from typing import List, Optional, Tuple

import numpy as np

from diffusion.denoiser import ConditionalDenoiser
from diffusion.sampler import StepContext, cfg_noise, sample
from diffusion.schedule import LatentState, NoiseSchedule, x0_estimate
from guidance.events import GenerationEvents, StepEvent
from guidance.image_guidance import apply_attentive_guidance, extract_mask, gamma_schedule, guide_target
from guidance.losses import LogitModel, adversarial_loss, contrastive_loss, mean_pairwise_distance, update_embedding
from guidance.memory_bank import MemoryBank
from numerics import ops
from numerics.rng import RngState, make_rng
from numerics.tensor import Tape, Tensor
from shared.config import GuidanceConfig
from shared.errors import GuidanceError, ShapeError
from shared.log import debug, log


def guided_generate(
    denoiser: ConditionalDenoiser,
    classifier: Optional[LogitModel],
    guide_image: Tensor,
    y: int,
    cfg: GuidanceConfig,
    bank: MemoryBank,
    sched: NoiseSchedule,
    rng: RngState,
    gt_mask: Optional[Tensor] = None,
    adversarial: Optional[bool] = None,
    bank_rng: Optional[RngState] = None,
    insert: bool = True,
    strength: Optional[float] = None,
) -> Tuple[Tensor, GenerationEvents]:
    """Generate one image of class ``y`` guided by ``guide_image``.

    ``adversarial`` overrides ``cfg.adversarial`` for this call, ``strength``
    overrides ``cfg.i``. With ``insert=False`` the caller owns the bank update
    (the active loop inserts in generation order after a parallel phase).
    """
    if guide_image.shape != tuple(denoiser.image_shape):
        raise ShapeError("guided_generate", guide_image.shape, denoiser.image_shape, "guide image")
    adversarial = cfg.adversarial if adversarial is None else adversarial
    if adversarial and classifier is None:
        raise GuidanceError("adversarial guidance needs a classifier")
    i = cfg.i if strength is None else strength
    bank_rng = make_rng(0, "bank") if bank_rng is None else bank_rng

    cond = denoiser.embed_class(y)
    use_gradient = cfg.grad_window > 0 and (cfg.contrastive or adversarial)
    entries: List[Tensor] = bank.sample(y, cfg.n_cap, bank_rng) if use_gradient and cfg.contrastive else []
    events = GenerationEvents()

    def gradient_step(ctx: StepContext, event: StepEvent):
        with Tape() as tape:
            vec = tape.watch(ctx.cond.vec)
            eps_c, _ = denoiser.predict_noise(ctx.x_t, ctx.cond, ctx.t)
            eps_hat = cfg_noise(eps_c, ctx.eps_uncond, cfg.s)
            state = LatentState(ctx.x_t, ctx.t)
            total = Tensor(0.0)
            if cfg.contrastive:
                l_contra = contrastive_loss(x0_estimate(state, eps_hat, sched), entries, cfg.rho)
                event.l_contra = l_contra.item()
                total = l_contra
            if adversarial:
                l_adv = adversarial_loss(state, eps_hat, sched, classifier, y)
                event.l_adv = l_adv.item()
                total = ops.add(total, ops.scale(l_adv, cfg.lam))

        if tape.is_tracked(total):
            grad = tape.backward(total)[vec]
        else:
            grad = Tensor.zeros(vec.shape)
        event.grad_norm = float(np.linalg.norm(grad.data))
        new_cond, skipped = update_embedding(ctx.cond, grad, cfg.nu)
        event.skipped_update = skipped
        return new_cond

    def hook(ctx: StepContext):
        gamma = gamma_schedule(ctx.t, i)
        event = StepEvent(step=ctx.step, gamma=gamma)
        x_prev = ctx.x_prev
        if cfg.image_guidance:
            mask = extract_mask(ctx.attn, cfg.mask_mode, gt_mask)
            target = guide_target(guide_image, ctx.t, ctx.z, sched)
            x_prev = apply_attentive_guidance(x_prev, target, gamma, mask, cfg.sign)
            event.mask_mean = mask.mean
        new_cond = ctx.cond
        if use_gradient and ctx.step < cfg.grad_window:
            new_cond = gradient_step(ctx, event)
        events.append(event)
        return x_prev, new_cond

    image = sample(denoiser, cond, sched, rng, s=cfg.s, step_hook=hook)
    if insert:
        bank.insert(y, image)
    debug("Guidance", f"class={y} adversarial={adversarial} skipped_updates={events.skipped_updates}")
    return image, events


def generate_plain(
    denoiser: ConditionalDenoiser, y: int, sched: NoiseSchedule, rng: RngState, s: float = 15.0
) -> Tensor:
    """Unguided conditional sample, the comparison arm for guided generation."""
    return sample(denoiser, denoiser.embed_class(y), sched, rng, s=s)


def resolve_rho(cfg: GuidanceConfig, images: np.ndarray, max_images: int = 256) -> GuidanceConfig:
    """Replace rho by ``rho_fraction`` x mean pairwise image distance, when set."""
    if cfg.rho_fraction is None:
        return cfg
    subset = [img for img in images[:max_images]]
    rho = cfg.rho_fraction * mean_pairwise_distance(subset)
    if rho <= 0.0:
        return cfg
    log("Guidance", f"rho resolved to {rho:.4f} ({cfg.rho_fraction} x mean pairwise distance)")
    return cfg.model_copy(update={"rho": rho})
