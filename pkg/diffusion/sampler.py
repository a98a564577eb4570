"""
DDPM reverse sampler with classifier-free guidance.

A step hook sees every transition x_t -> x_{t-1} and may replace both the next
latent and the condition embedding; attentive image guidance and the
gradient-based embedding updates plug in there.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np

from diffusion.denoiser import ConditionEmbedding
from diffusion.schedule import LatentState, NoiseSchedule
from numerics import ops
from numerics.rng import RngState, rng_gaussian
from numerics.tensor import Tensor
from shared.errors import GuidanceError, ScheduleError, ShapeError


class NoisePredictor(Protocol):
    image_shape: Tuple[int, int, int]

    def embed_class(self, y: Optional[int]) -> ConditionEmbedding: ...

    def predict_noise(self, x_t: Tensor, cond: ConditionEmbedding, t: int) -> Tuple[Tensor, Tensor]: ...


def cfg_noise(eps_cond: Tensor, eps_uncond: Tensor, s: float) -> Tensor:
    """eps_uncond + s (eps_cond - eps_uncond)."""
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeError("cfg_noise", eps_cond.shape, eps_uncond.shape)
    return ops.add(eps_uncond, ops.scale(ops.sub(eps_cond, eps_uncond), s))


def ddpm_step(state: LatentState, eps_hat: Tensor, z: Tensor, sched: NoiseSchedule) -> LatentState:
    """One reverse transition; ``z`` is supplied so guidance can reuse it."""
    t = state.t
    if t < 1:
        raise ScheduleError("ddpm_step at t=0: nothing to denoise")
    sched.check_step(t, low=1)
    if eps_hat.shape != state.x.shape or z.shape != state.x.shape:
        raise ShapeError("ddpm_step", state.x.shape, eps_hat.shape if eps_hat.shape != state.x.shape else z.shape)
    alpha, abar = sched.alpha[t], sched.alpha_bar[t]
    coef = (1.0 - alpha) / np.sqrt(1.0 - abar) if abar < 1.0 else 0.0
    mean = ops.scale(ops.sub(state.x, ops.scale(eps_hat, coef)), 1.0 / np.sqrt(alpha))
    return LatentState(x=ops.add(mean, ops.scale(z, sched.sigma[t])), t=t - 1)


@dataclass(frozen=True)
class StepContext:
    """Everything a hook may need about one reverse transition."""

    step: int  # 0 for the first transition (t = T)
    t: int
    x_t: Tensor
    x_prev: Tensor
    z: Tensor
    eps_hat: Tensor
    eps_uncond: Tensor
    attn: Tensor
    cond: ConditionEmbedding


StepHook = Callable[[StepContext], Tuple[Tensor, ConditionEmbedding]]


def sample(
    denoiser: NoisePredictor,
    cond: ConditionEmbedding,
    sched: NoiseSchedule,
    rng: RngState,
    s: float = 15.0,
    step_hook: Optional[StepHook] = None,
) -> Tensor:
    """Plain conditional DDPM sampling when ``step_hook`` is None.

    Draws x_T first and then one z per step, so two calls with identically
    seeded generators consume identical streams.
    """
    shape = tuple(denoiser.image_shape)
    null = denoiser.embed_class(None)
    x = rng_gaussian(rng, shape)
    for step, t in enumerate(range(sched.T, 0, -1)):
        eps_c, attn = denoiser.predict_noise(x, cond, t)
        eps_u, _ = denoiser.predict_noise(x, null, t)
        eps_hat = cfg_noise(eps_c, eps_u, s)
        z = rng_gaussian(rng, shape)
        x_prev = ddpm_step(LatentState(x, t), eps_hat, z, sched).x

        if step_hook is not None:
            ctx = StepContext(step, t, x, x_prev, z, eps_hat, eps_u, attn, cond)
            x_prev, new_cond = step_hook(ctx)
            if x_prev.shape != shape:
                raise GuidanceError(f"step hook returned latent of shape {x_prev.shape}, expected {shape}")
            if new_cond.vec.shape != cond.vec.shape:
                raise GuidanceError(
                    f"step hook returned embedding of shape {new_cond.vec.shape}, expected {cond.vec.shape}"
                )
            cond = new_cond
        x = x_prev
    return x
