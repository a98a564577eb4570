"""Minimal numeric kernel: tensors, tape-based autodiff, seeded streams."""

from numerics import tensor as ops
from numerics.gradcheck import finite_diff_grad, relative_error
from numerics.rng import RngState, make_rng, rng_gaussian
from numerics.tensor import Gradients, Tape, Tensor, autodiff_backward

__all__ = [
    "ops",
    "Tensor",
    "Tape",
    "Gradients",
    "autodiff_backward",
    "finite_diff_grad",
    "relative_error",
    "RngState",
    "make_rng",
    "rng_gaussian",
]
