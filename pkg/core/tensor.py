"""Dense tensors with a recorded operation tape for reverse-mode gradients.

Every operation in this module checks shapes, computes its result in float64,
rejects non-finite output and, when a ``ComputationTape`` is active, appends a
node holding the backward closure. Nothing is recorded when no tape is active,
which is how inference runs.

Only one broadcasting form exists: ``add_bias`` adds a vector to every row.
"""
import logging
from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterator, Literal, Optional, Sequence

import numpy as np
from scipy.special import expit

from core.exceptions import NonFiniteError, ShapeError, TapeError, VocabularyError

logger = logging.getLogger(__name__)

DTYPE = np.float64

ActivationKind = Literal["tanh", "sigmoid", "relu"]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["ComputationTape"]] = ContextVar("active_tape", default=None)


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what}: non-finite values (NaN or Inf)")


class Tensor:
    """Real array in row-major order with an optional gradient.

    Tensors that do not require gradients are read-only once built; parameter
    tensors stay writable so optimizers can update them in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=DTYPE)
        if any(dim < 1 for dim in array.shape):
            raise ShapeError(f"{name or 'tensor'}: dimensions must be positive, got {array.shape}")
        _check_finite(array, name or "tensor")
        if not requires_grad:
            array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional["_Node"] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        data.flags.writeable = False
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._node = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Caller-owned copy of the values."""
        return np.array(self.data, copy=True)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def constant(values) -> Tensor:
    """Non-trainable tensor."""
    return Tensor(values, requires_grad=False)


def parameter(values, name: Optional[str] = None) -> Tensor:
    """Trainable tensor with its own copy of ``values``."""
    return Tensor(values, requires_grad=True, name=name)


@dataclass
class _Node:
    index: int
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    tape: "ComputationTape"


class ComputationTape:
    """Ordered record of operations, used as a context manager.

    ``mac_counter`` counts multiply-accumulates of every recorded product;
    ``stage_macs`` splits the same count by the stage names opened with
    :meth:`stage`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.mac_counter = 0
        self.stage_macs: dict[str, int] = defaultdict(int)
        self._stages: list[str] = []
        self._tokens: list = []

    def __enter__(self) -> "ComputationTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor._node is not None and tensor._node.tape is self

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        self._stages.append(name)
        try:
            yield
        finally:
            self._stages.pop()

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward: BackwardFn,
        macs: int = 0,
    ) -> None:
        node = _Node(len(self.nodes), kind, tuple(inputs), output, backward, self)
        output._node = node
        self.nodes.append(node)
        if macs:
            self.mac_counter += macs
            for name in set(self._stages):
                self.stage_macs[name] += macs


def active_tape() -> Optional[ComputationTape]:
    return _ACTIVE_TAPE.get()


@contextmanager
def no_tape() -> Iterator[None]:
    """Run operations without recording, even inside an active tape."""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


@contextmanager
def tape_stage(name: str) -> Iterator[None]:
    """Attribute MACs to ``name`` on the active tape, if any."""
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        yield
        return
    with tape.stage(name):
        yield


def custom_op(
    kind: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward: BackwardFn,
    macs: int = 0,
) -> Tensor:
    """Wrap a computed array as an operation output.

    ``backward`` maps the output gradient to one gradient (or None) per input.
    Modules with fused operations build on this instead of the tape directly.
    """
    data = np.asarray(data, dtype=DTYPE)
    _check_finite(data, kind)
    out = Tensor._from_op(data, any(t.requires_grad for t in inputs))
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.record(kind, inputs, out, backward, macs)
    return out


def _require_ndim(x: Tensor, ndim: int, op: str) -> None:
    if x.ndim != ndim:
        raise ShapeError(f"{op}: expected a {ndim}-d tensor, got shape {x.shape}")


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[m x k] @ [k x n]; records m*n*k multiply-accumulates."""
    _require_ndim(a, 2, "matmul")
    _require_ndim(b, 2, "matmul")
    (m, k), (k2, n) = a.shape, b.shape
    if k != k2:
        raise ShapeError(f"matmul: inner dimensions differ: [{m} x {k}] @ [{k2} x {n}]")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return custom_op("matmul", a.data @ b.data, (a, b), backward, macs=m * n * k)


def transpose(x: Tensor) -> Tensor:
    _require_ndim(x, 2, "transpose")
    return custom_op("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


# Elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return custom_op("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return custom_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def backward(g):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return custom_op("mul", a.data * b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return custom_op("scale", x.data * factor, (x,), lambda g: (g * factor,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add ``bias`` (length n) to every row of ``x`` (last dimension n)."""
    _require_ndim(bias, 1, "add_bias")
    if x.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match rows of {x.shape}")

    def backward(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return custom_op("add_bias", x.data + bias.data, (x, bias), backward)


def activation(x: Tensor, kind: ActivationKind) -> Tensor:
    """Elementwise tanh, sigmoid or relu (relu'(0) = 0)."""
    if kind == "tanh":
        y = np.tanh(x.data)
        return custom_op("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = expit(x.data)
        return custom_op("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "relu":
        active = x.data > 0
        y = np.where(active, x.data, 0.0)
        return custom_op("relu", y, (x,), lambda g: (g * active,))
    raise ValueError(f"unknown activation: {kind!r}")


def softmax_rows(m: Tensor) -> Tensor:
    """Normalize along the last axis after subtracting the row maximum."""
    shifted = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return custom_op("softmax_rows", p, (m,), backward)


# Reductions

def sum_all(x: Tensor) -> Tensor:
    """Scalar sum of every element."""
    return custom_op("sum_all", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_cols(x: Tensor) -> Tensor:
    """Mean over the last axis of a matrix: [N x d] -> [N]."""
    _require_ndim(x, 2, "mean_cols")
    d = x.shape[1]
    return custom_op(
        "mean_cols", x.data.mean(axis=1), (x,),
        lambda g: (np.repeat(g[:, None] / d, d, axis=1),),
    )


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the first axis of a matrix: [N x d] -> [d]."""
    _require_ndim(x, 2, "mean_rows")
    n = x.shape[0]
    return custom_op(
        "mean_rows", x.data.mean(axis=0), (x,),
        lambda g: (np.repeat(g[None, :] / n, n, axis=0),),
    )


def max_over_first_axis(x: Tensor, lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Maximum along axis 0; ties resolve to the first position.

    For a [T x B x d] input, ``lengths[b]`` limits the search for column
    block b to the first ``max(lengths[b], 1)`` positions.
    """
    values = x.data
    if lengths is not None:
        if x.ndim != 3 or len(lengths) != x.shape[1]:
            raise ShapeError(f"max_over_first_axis: {len(lengths)} lengths for shape {x.shape}")
        steps = np.arange(x.shape[0])[:, None]
        limit = np.maximum(np.asarray(lengths, dtype=np.int64), 1)[None, :]
        hidden = (steps >= limit)[:, :, None]
        values = np.where(hidden, -np.inf, values)
    idx = np.argmax(values, axis=0)
    out = np.take_along_axis(x.data, idx[None], axis=0)[0]

    def backward(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx[None], g[None], axis=0)
        return (gx,)

    return custom_op("max_over_first_axis", out, (x,), backward)


# Indexing and layout

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return custom_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of ``table`` in the order of ``ids``; gradient scatter-adds."""
    _require_ndim(table, 2, "gather_rows")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError(f"gather_rows: ids must be a non-empty 1-d sequence, got shape {ids.shape}")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        bad = int(ids[(ids < 0) | (ids >= table.shape[0])][0])
        raise VocabularyError(f"gather_rows: id {bad} outside table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros(table.shape)
        np.add.at(gt, ids, g)
        return (gt,)

    return custom_op("gather_rows", table.data[ids], (table,), backward)


def gather_time(x: Tensor, steps: Sequence[int]) -> Tensor:
    """Pick ``x[steps[b], b]`` from a [T x B x d] tensor -> [B x d]."""
    _require_ndim(x, 3, "gather_time")
    steps = np.asarray(steps, dtype=np.int64)
    if steps.shape != (x.shape[1],) or steps.min() < 0 or steps.max() >= x.shape[0]:
        raise ShapeError(f"gather_time: steps {steps.tolist()} invalid for shape {x.shape}")
    cols = np.arange(x.shape[1])

    def backward(g):
        gx = np.zeros(x.shape)
        gx[steps, cols] = g
        return (gx,)

    return custom_op("gather_time", x.data[steps, cols], (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] outside {x.shape[0]} rows")

    def backward(g):
        gx = np.zeros(x.shape)
        gx[start:stop] = g
        return (gx,)

    return custom_op("slice_rows", x.data[start:stop].copy(), (x,), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_ndim(x, 2, "slice_cols")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] outside {x.shape[1]} columns")

    def backward(g):
        gx = np.zeros(x.shape)
        gx[:, start:stop] = g
        return (gx,)

    return custom_op("slice_cols", x.data[:, start:stop].copy(), (x,), backward)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    if not parts:
        raise ShapeError("stack: nothing to stack")
    for part in parts[1:]:
        _require_same_shape(parts[0], part, "stack")
    return custom_op(
        "stack", np.stack([p.data for p in parts]), tuple(parts),
        lambda g: tuple(g[i] for i in range(len(parts))),
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices with equal row counts side by side."""
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    for part in parts:
        _require_ndim(part, 2, "concat_cols")
        if part.shape[0] != parts[0].shape[0]:
            raise ShapeError(f"concat_cols: row counts differ: {parts[0].shape} vs {part.shape}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return custom_op("concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def pad_rows(x: Tensor, length: int) -> Tensor:
    """Zero-pad along axis 0 up to ``length``."""
    if x.shape[0] > length:
        raise ShapeError(f"pad_rows: {x.shape[0]} rows exceed target length {length}")
    padded = np.zeros((length,) + x.shape[1:])
    padded[: x.shape[0]] = x.data
    return custom_op("pad_rows", padded, (x,), lambda g: (g[: x.shape[0]],))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return custom_op("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# Losses

def cross_entropy(logits: Tensor, labels: Sequence[int], weights: Sequence[float]) -> Tensor:
    """Scalar sum over rows of ``weights[t] * -log softmax(logits[t])[labels[t]]``.

    Rows with weight 0 receive an exactly zero gradient.
    """
    _require_ndim(logits, 2, "cross_entropy")
    t, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=DTYPE)
    if labels.shape != (t,) or weights.shape != (t,):
        raise ShapeError(
            f"cross_entropy: {t} rows but {labels.shape[0]} labels and {weights.shape[0]} weights"
        )
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"cross_entropy: label outside [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(t), labels] - log_z
    value = -(weights * log_p).sum()

    def backward(g):
        p = np.exp(shifted - log_z[:, None])
        p[np.arange(t), labels] -= 1.0
        return (float(g) * weights[:, None] * p,)

    return custom_op("cross_entropy", np.array(value), (logits,), backward)


# Reverse pass

def backward(tape: ComputationTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf.

    Nodes are visited once each in reverse tape order, so gradient sums are
    formed in a fixed order. Returns the gradients contributed by this call.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss not in tape:
        raise TapeError("backward: loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: loss._node.index + 1]):
        out_grad = grads.pop(id(node.output), None)
        if out_grad is None:
            continue
        for tensor, grad in zip(node.inputs, node.backward(out_grad)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else np.array(grad, dtype=DTYPE)
            if tensor not in tape:
                leaves[key] = tensor

    contributed: dict[Tensor, np.ndarray] = {}
    for key, tensor in leaves.items():
        grad = grads[key].reshape(tensor.shape)
        _check_finite(grad, f"gradient of {tensor.name or 'tensor'}")
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
        contributed[tensor] = grad
    return contributed
