import logging
import math
from collections.abc import Mapping

import numpy as np

from numeric_core.params import ParamStore

logger = logging.getLogger(__name__)


def cosine_lr(step: int, total_steps: int, lr: float, min_lr: float) -> float:
    """Cosine annealing from lr at step 0 to min_lr at step total_steps - 1."""
    if total_steps <= 1:
        return min_lr
    progress = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return min_lr + 0.5 * (lr - min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(
        self,
        params: ParamStore,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(node.value) for name, node in params.items()}
        self.v = {name: np.zeros_like(node.value) for name, node in params.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, node in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            if node.value.ndim >= 2 and self.weight_decay:
                node.value *= 1.0 - lr * self.weight_decay
            node.value -= lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)
