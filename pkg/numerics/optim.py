"""Parameter-dict optimizers.

Parameters are ``Dict[str, Tensor]``; each step returns a new dict and never
touches the old tensors.
"""

from typing import Dict

import numpy as np

from numerics.tensor import Gradients, Tensor

Params = Dict[str, Tensor]


class MomentumSGD:
    """Heavy-ball SGD; L2 weight decay is folded into the gradient."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Params, grads: Gradients, lr: float) -> Params:
        updated: Params = {}
        for name, p in params.items():
            g = grads[p].data + self.weight_decay * p.data
            v = self.momentum * self.velocity.get(name, np.zeros_like(p.data)) + g
            self.velocity[name] = v
            updated[name] = Tensor._wrap(p.data - lr * v, "sgd_step")
        return updated

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.velocity = {k.split("/", 1)[1]: np.array(v) for k, v in arrays.items() if k.startswith("velocity/")}


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Params, grads: Gradients, lr: float) -> Params:
        self.t += 1
        updated: Params = {}
        for name, p in params.items():
            g = grads[p].data
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            updated[name] = Tensor._wrap(p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps), "adam_step")
        return updated
