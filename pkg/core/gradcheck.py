"""Central finite-difference verification of tape gradients."""
import logging
from typing import Callable, Sequence

import numpy as np

from core.exceptions import NonDeterministicError
from core.tensor import ComputationTape, Tensor, backward, no_tape

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_tape():
        return f().item()


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` takes no arguments, reads the current values of ``params`` and
    returns a scalar tensor. Parameters are perturbed in place and restored.
    Returns the largest ``|a - n| / max(1e-8, |a| + |n|)`` over all elements.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    first = _evaluate(f)
    second = _evaluate(f)
    if first != second:
        raise NonDeterministicError(
            f"function returned {first!r} then {second!r} for identical parameters"
        )

    saved = [p.grad for p in params]
    for p in params:
        p.zero_grad()
    with ComputationTape() as tape:
        loss = f()
    analytic: dict[int, np.ndarray] = {}
    if loss in tape:
        for tensor, grad in backward(tape, loss).items():
            analytic[id(tensor)] = grad
    for p, grad in zip(params, saved):
        p.grad = grad

    worst = 0.0
    for p in params:
        expected = analytic.get(id(p), np.zeros(p.shape))
        for idx in np.ndindex(p.shape):
            original = p.data[idx]
            p.data[idx] = original + eps
            f_plus = _evaluate(f)
            p.data[idx] = original - eps
            f_minus = _evaluate(f)
            p.data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(expected[idx])
            error = abs(a - numeric) / max(RELATIVE_FLOOR, abs(a) + abs(numeric))
            worst = max(worst, error)

    logger.debug(f"finite_diff_check over {sum(p.size for p in params)} values: max rel error {worst:.3e}")
    return worst
