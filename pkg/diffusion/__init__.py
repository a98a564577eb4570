"""Pixel-space DDPM: schedules, the conditional denoiser and its sampler."""

from diffusion.denoiser import ConditionalDenoiser, ConditionEmbedding, DenoiserArch, embed_class, predict_noise
from diffusion.sampler import StepContext, cfg_noise, ddpm_step, sample
from diffusion.schedule import LatentState, NoiseSchedule, build_schedule, forward_sample, x0_estimate
from diffusion.training import train_denoiser

__all__ = [
    "ConditionalDenoiser",
    "ConditionEmbedding",
    "DenoiserArch",
    "LatentState",
    "NoiseSchedule",
    "StepContext",
    "build_schedule",
    "cfg_noise",
    "ddpm_step",
    "embed_class",
    "forward_sample",
    "predict_noise",
    "sample",
    "train_denoiser",
    "x0_estimate",
]
