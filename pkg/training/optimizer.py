"""Adam updates with global gradient-norm clipping."""
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from core.exceptions import NonFiniteError
from core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First and second moments per parameter name, plus the step count."""

    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def global_norm(params: Mapping[str, Tensor]) -> float:
    """L2 norm of all gradients taken together (missing gradients count as zero)."""
    return math.sqrt(math.fsum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))


class Adam:
    """Adam over named parameter tensors, updated in place."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float = 5.0,
    ):
        """Initialize optimizer with zero moments."""
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = OptimizerState(
            first_moment={name: np.zeros(p.shape) for name, p in self.params.items()},
            second_moment={name: np.zeros(p.shape) for name, p in self.params.items()},
        )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clip_gradients(self) -> float:
        """Rescale gradients so their global norm is at most ``clip_norm``; returns the norm before."""
        norm = global_norm(self.params)
        if not math.isfinite(norm):
            raise NonFiniteError(f"gradient norm is {norm}")
        if norm > self.clip_norm:
            factor = self.clip_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * factor
        return norm

    def step(self) -> float:
        """Clip, apply one update, clear gradients; returns the unclipped norm."""
        norm = self.clip_gradients()
        self.state.step += 1
        t = self.state.step
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self.state.first_moment[name]
            v = self.state.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        self.zero_grad()
        return norm
