"""Multi-head self-attention over utterance vectors with a Gaussian locality bias.

For each row i of a window the bias predicts a center c_i within ``C`` of i
and a width w_i in (0, D) from the mean of the keys, then adds
POS[i, j] = -(j - c_i)^2 / (2 w_i^2) to every head's logits. Positions are
0-based throughout.

Operations are grouped into tape stages ``projection``, ``bias``,
``attention`` and ``output`` so operation counts can be read per stage.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Union

import numpy as np

from core.exceptions import ConfigurationError, ShapeError
from core.tensor import (
    Tensor,
    activation,
    add,
    concat_cols,
    constant,
    custom_op,
    matmul,
    mean_cols,
    mean_rows,
    pad_rows,
    parameter,
    reshape,
    scale,
    slice_rows,
    softmax_rows,
    tape_stage,
    transpose,
)

logger = logging.getLogger(__name__)

KeyMeanMode = Literal["position", "feature"]

# Smallest width used in POS; below it w^2 underflows and the bias overflows.
WIDTH_FLOOR = 1e-6


class AttentionParams:
    """Per-head projections, output projection and locality weights."""

    def __init__(
        self,
        w_q: list[Tensor],
        w_k: list[Tensor],
        w_v: list[Tensor],
        w_o: Tensor,
        w_c: Tensor,
        w_d: Tensor,
        center_bound: float,
        width_scale: float,
        n_max: int,
        key_mean_mode: KeyMeanMode = "position",
    ):
        if not (len(w_q) == len(w_k) == len(w_v) >= 1):
            raise ShapeError(f"need one Q/K/V projection per head, got {len(w_q)}/{len(w_k)}/{len(w_v)}")
        d_s, d_z = w_q[0].shape
        for w in (*w_q, *w_k, *w_v):
            if w.shape != (d_s, d_z):
                raise ShapeError(f"head projection {w.shape} differs from ({d_s}, {d_z})")
        if w_o.shape != (d_z * len(w_q), d_s):
            raise ShapeError(f"output projection {w_o.shape}, expected ({d_z * len(w_q)}, {d_s})")
        locality_shape = (n_max, n_max) if key_mean_mode == "position" else (1, d_z)
        if w_c.shape != locality_shape or w_d.shape != locality_shape:
            raise ShapeError(
                f"locality weights {w_c.shape}/{w_d.shape}, expected {locality_shape} "
                f"for key_mean_mode={key_mean_mode!r}"
            )
        if center_bound <= 0 or width_scale <= 0:
            raise ConfigurationError(
                f"center bound and width scale must be positive, got {center_bound}, {width_scale}"
            )
        self.w_q = list(w_q)
        self.w_k = list(w_k)
        self.w_v = list(w_v)
        self.w_o = w_o
        self.w_c = w_c
        self.w_d = w_d
        self.center_bound = float(center_bound)
        self.width_scale = float(width_scale)
        self.n_max = n_max
        self.key_mean_mode = key_mean_mode

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def model_dim(self) -> int:
        return self.w_q[0].shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q[0].shape[1]

    @classmethod
    def initialize(
        cls,
        model_dim: int,
        head_dim: int,
        heads: int,
        n_max: int,
        center_bound: float,
        width_scale: float,
        rng: np.random.Generator,
        key_mean_mode: KeyMeanMode = "position",
    ) -> "AttentionParams":
        bound = 1.0 / math.sqrt(model_dim)

        def projections(kind: str) -> list[Tensor]:
            return [
                parameter(rng.uniform(-bound, bound, (model_dim, head_dim)), f"attention.w_{kind}.{h}")
                for h in range(heads)
            ]

        w_q, w_k, w_v = projections("q"), projections("k"), projections("v")
        out_bound = 1.0 / math.sqrt(head_dim * heads)
        w_o = parameter(rng.uniform(-out_bound, out_bound, (head_dim * heads, model_dim)), "attention.w_o")
        locality_shape = (n_max, n_max) if key_mean_mode == "position" else (1, head_dim)
        return cls(
            w_q, w_k, w_v, w_o,
            parameter(np.zeros(locality_shape), "attention.w_c"),
            parameter(np.zeros(locality_shape), "attention.w_d"),
            center_bound, width_scale, n_max, key_mean_mode,
        )

    def parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for kind, weights in (("q", self.w_q), ("k", self.w_k), ("v", self.w_v)):
            for h, w in enumerate(weights):
                named[f"attention.w_{kind}.{h}"] = w
        named["attention.w_o"] = self.w_o
        named["attention.w_c"] = self.w_c
        named["attention.w_d"] = self.w_d
        return named


@dataclass
class BiasField:
    """Bias rows for a block of query positions, kept as tensors.

    ``pos`` is [R x N]; ``centers`` and ``widths`` are [R x 1].
    """

    pos: Tensor
    centers: Tensor
    widths: Tensor


def _check_length(n: int, params: AttentionParams) -> None:
    if n < 1:
        raise ShapeError("attention needs at least one utterance")
    if n > params.n_max:
        raise ConfigurationError(
            f"window of {n} utterances exceeds n_max={params.n_max}; "
            f"raise n_max or use a smaller window/padding"
        )


def key_mean(keys: Tensor, n_max: int, mode: KeyMeanMode = "position") -> Tensor:
    """Summary of the keys as a column vector.

    ``position``: feature mean per position, zero-padded to [n_max x 1].
    ``feature``: position mean per feature, [d_z x 1].
    """
    if keys.ndim != 2 or keys.shape[0] < 1:
        raise ShapeError(f"key_mean: expected a non-empty [N x d] matrix, got {keys.shape}")
    if mode == "feature":
        return reshape(mean_rows(keys), (keys.shape[1], 1))
    n = keys.shape[0]
    if n > n_max:
        raise ConfigurationError(f"key_mean: {n} positions exceed n_max={n_max}")
    return pad_rows(reshape(mean_cols(keys), (n, 1)), n_max)


def _quadratic_bias(centers: Tensor, widths: Tensor, n: int) -> Tensor:
    """POS[r, j] = -(j - c_r)^2 / (2 w_r^2) for j in 0..n-1."""
    c = centers.data
    live = widths.data > WIDTH_FLOOR
    w = np.maximum(widths.data, WIDTH_FLOOR)
    diff = np.arange(n, dtype=np.float64)[None, :] - c
    pos = -(diff ** 2) / (2.0 * w ** 2)

    def backward(g):
        gc = (g * diff / w ** 2).sum(axis=1, keepdims=True)
        gw = (g * diff ** 2 / w ** 3).sum(axis=1, keepdims=True) * live
        return gc, gw

    return custom_op("gaussian_bias", pos, (centers, widths), backward, macs=c.shape[0] * n)


def gaussian_bias(
    kbar: Tensor,
    params: AttentionParams,
    n: int,
    rows: Optional[tuple[int, int]] = None,
) -> BiasField:
    """Centers, widths and bias rows ``rows[0]..rows[1]-1`` for an n-long window."""
    _check_length(n, params)
    start, stop = rows or (0, n)
    if not 0 <= start < stop <= n:
        raise ShapeError(f"gaussian_bias: rows [{start}:{stop}] outside window of {n}")
    count = stop - start

    if params.key_mean_mode == "position":
        center_logit = matmul(slice_rows(params.w_c, start, stop), kbar)
        width_logit = matmul(slice_rows(params.w_d, start, stop), kbar)
    else:
        ones = constant(np.ones((count, 1)))
        center_logit = matmul(ones, matmul(params.w_c, kbar))
        width_logit = matmul(ones, matmul(params.w_d, kbar))

    own = constant(np.arange(start, stop, dtype=np.float64).reshape(count, 1))
    centers = add(own, scale(activation(center_logit, "tanh"), params.center_bound))
    widths = scale(activation(width_logit, "sigmoid"), params.width_scale)
    return BiasField(_quadratic_bias(centers, widths, n), centers, widths)


def _project(s: Tensor, params: AttentionParams, query_rows: Optional[tuple[int, int]] = None):
    queries_from = s if query_rows is None else slice_rows(s, *query_rows)
    queries = [matmul(queries_from, w) for w in params.w_q]
    keys = [matmul(s, w) for w in params.w_k]
    values = [matmul(s, w) for w in params.w_v]
    return queries, keys, values


def _head_mean(keys: list[Tensor]) -> Tensor:
    total = keys[0]
    for k in keys[1:]:
        total = add(total, k)
    return scale(total, 1.0 / len(keys))


def _mix(
    queries: list[Tensor],
    keys: list[Tensor],
    values: list[Tensor],
    pos: Optional[Tensor],
    residual: Tensor,
    params: AttentionParams,
) -> tuple[Tensor, list[np.ndarray]]:
    inv_sqrt = 1.0 / math.sqrt(params.head_dim)
    outputs: list[Tensor] = []
    weights: list[np.ndarray] = []
    with tape_stage("attention"):
        for q, k, v in zip(queries, keys, values):
            logits = scale(matmul(q, transpose(k)), inv_sqrt)
            if pos is not None:
                logits = add(logits, pos)
            attention = softmax_rows(logits)
            weights.append(attention.numpy())
            outputs.append(matmul(attention, v))
    with tape_stage("output"):
        merged = outputs[0] if len(outputs) == 1 else concat_cols(outputs)
        return add(matmul(merged, params.w_o), residual), weights


BiasSource = Union[Tensor, Callable[[list[Tensor]], Tensor], None]


def _locality_bias(params: AttentionParams) -> Callable[[list[Tensor]], Tensor]:
    def compute(keys: list[Tensor]) -> Tensor:
        kbar = key_mean(_head_mean(keys), params.n_max, params.key_mean_mode)
        return gaussian_bias(kbar, params, keys[0].shape[0]).pos

    return compute


def attend_with_pos(s: Tensor, params: AttentionParams, pos: BiasSource) -> tuple[Tensor, list[np.ndarray]]:
    """Offline attention with an [N x N] bias, none, or one computed from the projected keys."""
    if s.ndim != 2 or s.shape[1] != params.model_dim:
        raise ShapeError(f"attend: input {s.shape} does not match model dim {params.model_dim}")
    n = s.shape[0]
    _check_length(n, params)
    with tape_stage("projection"):
        queries, keys, values = _project(s, params)
    if callable(pos):
        with tape_stage("bias"):
            pos = pos(keys)
    if pos is not None and pos.shape != (n, n):
        raise ShapeError(f"attend: bias {pos.shape} does not match window of {n}")
    return _mix(queries, keys, values, pos, s, params)


def attend(s: Tensor, params: AttentionParams, use_bias: bool = True) -> tuple[Tensor, list[np.ndarray]]:
    """All-positions attention; returns [N x d_s] output and per-head weights."""
    return attend_with_pos(s, params, _locality_bias(params) if use_bias else None)


def attend_online(s: Tensor, params: AttentionParams, use_bias: bool = True) -> Tensor:
    """Output for the last row only: one query against all n keys -> [d_s]."""
    if s.ndim != 2 or s.shape[1] != params.model_dim:
        raise ShapeError(f"attend_online: input {s.shape} does not match model dim {params.model_dim}")
    n = s.shape[0]
    _check_length(n, params)
    with tape_stage("projection"):
        queries, keys, values = _project(s, params, query_rows=(n - 1, n))
    pos = None
    if use_bias:
        with tape_stage("bias"):
            kbar = key_mean(_head_mean(keys), params.n_max, params.key_mean_mode)
            pos = gaussian_bias(kbar, params, n, rows=(n - 1, n)).pos
    out, _ = _mix(queries, keys, values, pos, slice_rows(s, n - 1, n), params)
    return reshape(out, (params.model_dim,))
