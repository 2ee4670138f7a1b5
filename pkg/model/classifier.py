"""Two-layer ReLU classifier applied to every context output row."""
import math

import numpy as np

from core.exceptions import ShapeError
from core.tensor import Tensor, activation, add_bias, matmul, parameter, reshape


class ClassifierParams:
    """FC1 [d_s x d_f] and FC2 [d_f x |labels|] with their biases."""

    def __init__(self, fc1: Tensor, b1: Tensor, fc2: Tensor, b2: Tensor):
        if fc1.ndim != 2 or fc2.ndim != 2 or fc1.shape[1] != fc2.shape[0]:
            raise ShapeError(f"classifier layers do not chain: {fc1.shape} then {fc2.shape}")
        if b1.shape != (fc1.shape[1],) or b2.shape != (fc2.shape[1],):
            raise ShapeError(f"classifier biases {b1.shape}, {b2.shape} do not match layers")
        self.fc1 = fc1
        self.b1 = b1
        self.fc2 = fc2
        self.b2 = b2

    @property
    def input_dim(self) -> int:
        return self.fc1.shape[0]

    @property
    def num_labels(self) -> int:
        return self.fc2.shape[1]

    @classmethod
    def initialize(cls, input_dim: int, ffn_dim: int, num_labels: int, rng: np.random.Generator):
        """FC1 uniform in +-1/sqrt(d_s); FC2 and both biases start at zero."""
        bound = 1.0 / math.sqrt(input_dim)
        return cls(
            parameter(rng.uniform(-bound, bound, (input_dim, ffn_dim)), "classifier.fc1"),
            parameter(np.zeros(ffn_dim), "classifier.b1"),
            parameter(np.zeros((ffn_dim, num_labels)), "classifier.fc2"),
            parameter(np.zeros(num_labels), "classifier.b2"),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {
            "classifier.fc1": self.fc1,
            "classifier.b1": self.b1,
            "classifier.fc2": self.fc2,
            "classifier.b2": self.b2,
        }


def classify(u: Tensor, params: ClassifierParams) -> Tensor:
    """Logits for a [d_s] vector or each row of an [N x d_s] matrix."""
    if u.shape[-1] != params.input_dim or u.ndim not in (1, 2):
        raise ShapeError(f"classify: input {u.shape} does not match FC1 input dim {params.input_dim}")
    rows = u if u.ndim == 2 else reshape(u, (1, params.input_dim))
    hidden = activation(add_bias(matmul(rows, params.fc1), params.b1), "relu")
    logits = add_bias(matmul(hidden, params.fc2), params.b2)
    return logits if u.ndim == 2 else reshape(logits, (params.num_labels,))
