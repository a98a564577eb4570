"""Training-aware guidance: attentive image guidance, contrastive and adversarial steering."""

from guidance.events import GenerationEvents, StepEvent, merge_events, write_events_csv
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
from guidance.memory_bank import MemoryBank, bank_insert, bank_sample
from shared.config import GuidanceConfig

__all__ = [
    "AttentionMask",
    "GenerationEvents",
    "GuidanceConfig",
    "MemoryBank",
    "StepEvent",
    "adversarial_loss",
    "apply_attentive_guidance",
    "apply_image_guidance",
    "bank_insert",
    "bank_sample",
    "confidence_to_guidance",
    "contrastive_loss",
    "extract_mask",
    "gamma_schedule",
    "generate_plain",
    "guide_target",
    "guided_generate",
    "mask_iou",
    "mean_pairwise_distance",
    "merge_events",
    "resolve_rho",
    "update_embedding",
    "write_events_csv",
]
