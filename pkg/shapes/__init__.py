"""Toy shapes data and every on-disk format: datasets, image dumps, checkpoints."""

from shapes.checkpoint import load_checkpoint, load_classifier, load_denoiser, save_checkpoint, save_classifier, save_denoiser
from shapes.dataset import CLASS_NAMES, Sample, ShapeDataset, generate_shapes_dataset
from shapes.images import dump_image, encode_image
from shapes.storage import load_dataset, save_dataset

__all__ = [
    "CLASS_NAMES",
    "Sample",
    "ShapeDataset",
    "dump_image",
    "encode_image",
    "generate_shapes_dataset",
    "load_checkpoint",
    "load_classifier",
    "load_dataset",
    "load_denoiser",
    "save_checkpoint",
    "save_classifier",
    "save_dataset",
    "save_denoiser",
]
