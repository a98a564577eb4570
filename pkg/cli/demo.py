"""
gen-demo: side-by-side guidance arms, adversarial pairs and a mask report.

Every arm generates from the same seeds and guides, so rows of the output
grids differ only in the guidance applied.
"""

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from classifier.model import ConvClassifier
from diffusion.denoiser import ConditionalDenoiser
from diffusion.schedule import NoiseSchedule, forward_sample
from guidance.generator import generate_plain, guided_generate, resolve_rho
from guidance.image_guidance import extract_mask, mask_iou
from guidance.losses import mean_pairwise_distance
from guidance.memory_bank import MemoryBank
from numerics import ops
from numerics.rng import make_rng, rng_gaussian
from numerics.tensor import Tensor
from shapes.dataset import ShapeDataset
from shapes.images import dump_image, tile_images
from shared.config import GuidanceConfig
from shared.log import log, warn

ARMS = ("random", "image_guidance", "attentive", "contrastive", "adversarial")


def arm_configs(base: GuidanceConfig) -> Dict[str, GuidanceConfig]:
    """Guidance settings of each comparison arm, built on ``base``."""
    off = {"contrastive": False, "adversarial": False}
    return {
        "image_guidance": base.model_copy(update={**off, "image_guidance": True, "mask_mode": "none"}),
        "attentive": base.model_copy(update={**off, "image_guidance": True, "mask_mode": "attention"}),
        "contrastive": base.model_copy(update={"image_guidance": True, "mask_mode": "attention", "contrastive": True, "adversarial": False}),
        "adversarial": base.model_copy(update={"image_guidance": True, "mask_mode": "attention", "contrastive": True, "adversarial": True}),
    }


def _ext(images: np.ndarray) -> str:
    return "pgm" if images.shape[0] == 1 else "ppm"


def _dump_grid(images: List[Tensor], cols: int, path: Path) -> None:
    grid = tile_images(images, cols=cols)
    dump_image(grid, path.with_suffix("." + _ext(grid)))


def _cross_entropy(classifier: ConvClassifier, image: Tensor, y: int) -> float:
    logits = classifier.logits(ops.reshape(image, (1,) + image.shape))
    return ops.cross_entropy(logits, np.array([y])).item()


def render_arms(
    denoiser: ConditionalDenoiser,
    classifier: Optional[ConvClassifier],
    guides: ShapeDataset,
    base: GuidanceConfig,
    sched: NoiseSchedule,
    seed: int,
    out_dir: Path,
) -> pd.DataFrame:
    """One row of generations per arm under a row of guides; returns per-arm stats."""
    configs = arm_configs(base)
    rows: Dict[str, List[Tensor]] = {"guide": [Tensor(im) for im in guides.images]}
    stats = []
    for arm in ARMS:
        if arm == "adversarial" and classifier is None:
            warn("Demo", "no classifier checkpoint, skipping the adversarial arm")
            continue
        bank = MemoryBank(base.bank_capacity)
        images = []
        for k, sample in enumerate(guides):
            rng = make_rng(seed, "demo", k)
            if arm == "random":
                images.append(generate_plain(denoiser, sample.label, sched, rng, base.s))
                continue
            image, _ = guided_generate(
                denoiser,
                classifier,
                sample.image,
                sample.label,
                configs[arm],
                bank,
                sched,
                rng,
                gt_mask=sample.gt_mask,
                bank_rng=make_rng(seed, "demo", k, 1),
            )
            images.append(image)
        rows[arm] = images
        dist = [float(np.linalg.norm(im.data - s.image.data)) for im, s in zip(images, guides)]
        stats.append(
            {
                "arm": arm,
                "n": len(images),
                "mean_l2_to_guide": float(np.mean(dist)),
                "mean_pairwise_distance": mean_pairwise_distance([im.data for im in images]),
            }
        )
        log("Demo", f"arm {arm}: mean L2 to guide {stats[-1]['mean_l2_to_guide']:.3f}")

    ordered = [im for images in rows.values() for im in images]
    _dump_grid(ordered, len(guides), out_dir / "arms")
    frame = pd.DataFrame(stats, columns=["arm", "n", "mean_l2_to_guide", "mean_pairwise_distance"])
    frame.to_csv(out_dir / "arms.csv", index=False, float_format="%.10g")
    return frame


def adversarial_pairs(
    denoiser: ConditionalDenoiser,
    classifier: ConvClassifier,
    guides: ShapeDataset,
    base: GuidanceConfig,
    sched: NoiseSchedule,
    seed: int,
    out_dir: Path,
) -> pd.DataFrame:
    """Same guide and seed with adversarial guidance off and on."""
    cfg = base.model_copy(update={"image_guidance": True, "mask_mode": "attention"})
    records, plain_row, adv_row = [], [], []
    for k, sample in enumerate(guides):
        pair = {}
        for adversarial in (False, True):
            image, _ = guided_generate(
                denoiser,
                classifier,
                sample.image,
                sample.label,
                cfg,
                MemoryBank(base.bank_capacity),
                sched,
                make_rng(seed, "demo", k, 2),
                gt_mask=sample.gt_mask,
                adversarial=adversarial,
                bank_rng=make_rng(seed, "demo", k, 3),
            )
            pair[adversarial] = image
        plain_row.append(pair[False])
        adv_row.append(pair[True])
        for adversarial, image in pair.items():
            probs = classifier.predict_proba(image.data[None])[0]
            records.append(
                {
                    "pair": k,
                    "label": sample.label,
                    "adversarial": adversarial,
                    "predicted": int(probs.argmax()),
                    "confidence": float(probs[sample.label]),
                    "cross_entropy": _cross_entropy(classifier, image, sample.label),
                }
            )
    _dump_grid([s.image for s in guides] + plain_row + adv_row, len(guides), out_dir / "adversarial_pairs")
    frame = pd.DataFrame(records)
    frame.to_csv(out_dir / "adversarial_pairs.csv", index=False, float_format="%.10g")
    medians = frame.groupby("adversarial")["cross_entropy"].median()
    log("Demo", f"adversarial pairs: median CE {medians.get(False, float('nan')):.3f} -> {medians.get(True, float('nan')):.3f}")
    return frame


def mask_report(
    denoiser: ConditionalDenoiser,
    samples: ShapeDataset,
    sched: NoiseSchedule,
    seed: int,
    out_dir: Path,
    timesteps: Optional[List[int]] = None,
) -> pd.DataFrame:
    """IoU of attention-derived masks against ground truth, per sample and timestep."""
    timesteps = timesteps or sorted({sched.T, max(sched.T // 2, 1), 1})
    records = []
    for k, sample in enumerate(samples):
        rng = make_rng(seed, "demo", k, 4)
        cond = denoiser.embed_class(sample.label)
        for t in timesteps:
            x_t = forward_sample(sample.image, t, rng_gaussian(rng, sample.image.shape), sched)
            _, attn = denoiser.predict_noise(x_t, cond, t)
            mask = extract_mask(attn, "attention")
            records.append({"sample": k, "label": sample.label, "t": t, "iou": mask_iou(mask, sample.gt_mask)})
    frame = pd.DataFrame(records, columns=["sample", "label", "t", "iou"])
    frame.to_csv(out_dir / "mask_iou.csv", index=False, float_format="%.10g")
    if len(frame):
        summary = ", ".join(f"t={t}: {iou:.3f}" for t, iou in frame.groupby("t")["iou"].mean().items())
        log("Demo", f"attention mask IoU {summary}")
    return frame


def run_demo(
    denoiser: ConditionalDenoiser,
    classifier: Optional[ConvClassifier],
    guides: ShapeDataset,
    base: GuidanceConfig,
    sched: NoiseSchedule,
    seed: int,
    out_dir: Path,
    n_guides: int = 8,
) -> Dict[str, pd.DataFrame]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_class = max(n_guides // guides.spec.num_classes, 1)
    picks = [int(i) for c in range(guides.spec.num_classes) for i in np.flatnonzero(guides.labels == c)[:per_class]]
    chosen = guides.subset(picks[:n_guides])
    base = resolve_rho(base, guides.images)
    log("Demo", f"{len(chosen)} guides, arms: {', '.join(ARMS)}")

    results = {"arms": render_arms(denoiser, classifier, chosen, base, sched, seed, out_dir)}
    if classifier is not None:
        results["adversarial_pairs"] = adversarial_pairs(denoiser, classifier, chosen, base, sched, seed, out_dir)
    results["mask_iou"] = mask_report(denoiser, chosen, sched, seed, out_dir)
    return results
