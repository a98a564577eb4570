"""
Noise schedules and the closed-form forward process.

Arrays are indexed by timestep and have length T+1: index 0 is the clean
state (beta=0, alpha=1, alpha_bar=1, sigma=0) and indices 1..T are the
diffusion steps.
"""

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from numerics import ops
from numerics.tensor import Tensor
from shared.errors import ScheduleError, ShapeError


@dataclass(frozen=True)
class LatentState:
    """The diffusion variable x_t together with its timestep."""

    x: Tensor
    t: int


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    def __len__(self) -> int:
        return self.T

    def check_step(self, t: int, low: int = 0) -> None:
        if not (low <= t <= self.T):
            raise ScheduleError(f"timestep {t} outside [{low}, {self.T}]")

    @classmethod
    def from_betas(cls, betas, strict: bool = True) -> "NoiseSchedule":
        """Derive alpha, alpha_bar and the posterior sigma from per-step betas.

        ``strict=False`` admits beta=0 steps; it exists for hand-built schedules
        in tests.
        """
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("need at least one beta")
        lo_ok = np.all(betas > 0.0) if strict else np.all(betas >= 0.0)
        if not lo_ok or not np.all(betas < 1.0):
            raise ScheduleError(f"betas must lie in (0, 1), got range [{betas.min()}, {betas.max()}]")

        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.empty_like(alpha)
        alpha_bar[0] = 1.0
        for t in range(1, len(alpha)):
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t]

        # posterior variance beta_t (1 - abar_{t-1}) / (1 - abar_t); zero at t=1
        sigma = np.zeros_like(beta)
        for t in range(1, len(beta)):
            denom = 1.0 - alpha_bar[t]
            sigma[t] = np.sqrt(beta[t] * (1.0 - alpha_bar[t - 1]) / denom) if denom > 0.0 else 0.0

        for arr in (beta, alpha, alpha_bar, sigma):
            arr.flags.writeable = False
        return cls(beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def build_schedule(
    kind: Literal["linear", "cosine"] = "linear",
    T: int = 40,
    beta_min: float = 0.0025,
    beta_max: float = 0.5,
) -> NoiseSchedule:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")

    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], beta_min, beta_max)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(betas)


def forward_sample(x0: Tensor, t: Union[int, np.ndarray], eps: Tensor, sched: NoiseSchedule) -> Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` is a single timestep, or one timestep per entry of the leading axis.
    """
    if x0.shape != eps.shape:
        raise ShapeError("forward_sample", x0.shape, eps.shape)
    if np.ndim(t) == 0:
        sched.check_step(int(t))
        ab = sched.alpha_bar[int(t)]
        return ops.add(ops.scale(x0, np.sqrt(ab)), ops.scale(eps, np.sqrt(1.0 - ab)))

    steps = np.asarray(t, dtype=np.int64)
    if steps.shape != x0.shape[:1]:
        raise ShapeError("forward_sample", steps.shape, x0.shape[:1], "one timestep per sample")
    for step in np.unique(steps):
        sched.check_step(int(step))
    ab = np.broadcast_to(sched.alpha_bar[steps].reshape((-1,) + (1,) * (x0.ndim - 1)), x0.shape)
    return ops.add(ops.mul(x0, Tensor(np.sqrt(ab))), ops.mul(eps, Tensor(np.sqrt(1.0 - ab))))


def x0_estimate(state: "LatentState", eps_hat: Tensor, sched: NoiseSchedule) -> Tensor:
    """Invert the forward process given a noise estimate."""
    x_t, t = state.x, state.t
    if x_t.shape != eps_hat.shape:
        raise ShapeError("x0_estimate", x_t.shape, eps_hat.shape)
    sched.check_step(t, low=1)
    ab = sched.alpha_bar[t]
    if ab == 0.0:
        raise ScheduleError(f"alpha_bar is 0 at t={t}; x0 estimate undefined")
    return ops.scale(ops.sub(x_t, ops.scale(eps_hat, np.sqrt(1.0 - ab))), 1.0 / np.sqrt(ab))
