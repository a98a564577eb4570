"""Central finite differences, used as the oracle for autodiff gradients."""

from typing import Callable, Optional, Sequence

import numpy as np

from numerics.tensor import Tensor
from shared.errors import NonFiniteError


def finite_diff_grad(
    f: Callable[[Tensor], float],
    x: Tensor,
    h: float = 1e-5,
    coords: Optional[Sequence[int]] = None,
) -> Tensor:
    """Estimate df/dx with ``(f(x+h e_i) - f(x-h e_i)) / 2h``.

    ``coords`` restricts the check to some flat indices; the others are
    reported as zero.
    """
    base = x.numpy().reshape(-1)
    grad = np.zeros_like(base)
    indices = range(base.size) if coords is None else coords
    for i in indices:
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        fp = float(f(Tensor(plus.reshape(x.shape))))
        fm = float(f(Tensor(minus.reshape(x.shape))))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"finite_diff_grad: f is not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``|a - b| / max(|a|, |b|)`` in the Euclidean norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
