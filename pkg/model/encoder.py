"""Utterance encoder: embedding, LSTM and pooling over time.

PAD positions run through the LSTM like ordinary tokens unless pooling is
told to mask them.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from core.exceptions import ShapeError
from core.tensor import (
    Tensor,
    activation,
    add,
    add_bias,
    gather_rows,
    gather_time,
    matmul,
    max_over_first_axis,
    mul,
    parameter,
    reshape,
    slice_cols,
    slice_rows,
    stack,
    transpose,
)
from ingestion.vocab import PAD_ID

logger = logging.getLogger(__name__)

PoolMode = Literal["max", "last"]


@dataclass(frozen=True)
class UtteranceTokens:
    """Exactly M token ids; positions from ``true_length`` on hold PAD."""

    ids: tuple[int, ...]
    true_length: int

    def __post_init__(self):
        if not 0 <= self.true_length <= len(self.ids):
            raise ShapeError(f"true_length {self.true_length} outside [0, {len(self.ids)}]")


def pad_or_truncate(tokens: Sequence[int], max_len: int) -> UtteranceTokens:
    """Keep the first ``max_len`` ids, right-padding with PAD."""
    if max_len < 1:
        raise ShapeError(f"max_len must be >= 1, got {max_len}")
    kept = list(tokens[:max_len])
    return UtteranceTokens(tuple(kept) + (PAD_ID,) * (max_len - len(kept)), len(kept))


class LSTMParams:
    """Gate-stacked LSTM weights in i, f, g, o order."""

    def __init__(self, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
        hidden = w_hh.shape[1]
        if w_hh.shape != (4 * hidden, hidden) or w_ih.shape[0] != 4 * hidden or bias.shape != (4 * hidden,):
            raise ShapeError(
                f"inconsistent LSTM shapes: w_ih {w_ih.shape}, w_hh {w_hh.shape}, bias {bias.shape}"
            )
        self.w_ih = w_ih
        self.w_hh = w_hh
        self.bias = bias

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hh.shape[1]

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, prefix: str = "lstm"):
        bound = 1.0 / math.sqrt(hidden_dim)
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim: 2 * hidden_dim] = 1.0  # forget gate
        return cls(
            parameter(rng.uniform(-bound, bound, (4 * hidden_dim, input_dim)), f"{prefix}.w_ih"),
            parameter(rng.uniform(-bound, bound, (4 * hidden_dim, hidden_dim)), f"{prefix}.w_hh"),
            parameter(bias, f"{prefix}.bias"),
        )

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_ih": self.w_ih, f"{prefix}.w_hh": self.w_hh, f"{prefix}.bias": self.bias}


class EncoderParams:
    """Embedding table plus the utterance LSTM."""

    def __init__(self, embedding: Tensor, lstm: LSTMParams):
        if embedding.ndim != 2 or embedding.shape[1] != lstm.input_dim:
            raise ShapeError(
                f"embedding {embedding.shape} does not feed LSTM input dim {lstm.input_dim}"
            )
        self.embedding = embedding
        self.lstm = lstm

    @property
    def hidden_dim(self) -> int:
        return self.lstm.hidden_dim

    @classmethod
    def initialize(cls, vocab_size: int, embed_dim: int, hidden_dim: int, rng: np.random.Generator):
        embedding = parameter(rng.uniform(-0.1, 0.1, (vocab_size, embed_dim)), "encoder.embedding")
        return cls(embedding, LSTMParams.initialize(embed_dim, hidden_dim, rng, "encoder.lstm"))

    def parameters(self) -> dict[str, Tensor]:
        return {"encoder.embedding": self.embedding, **self.lstm.parameters("encoder.lstm")}


def embed(tokens: UtteranceTokens, table: Tensor) -> Tensor:
    """[M x d_e] rows of the embedding table."""
    return gather_rows(table, tokens.ids)


def lstm_steps(inputs: Sequence[Tensor], params: LSTMParams) -> list[Tensor]:
    """Run the recurrence over [B x d_in] step inputs from h0 = c0 = 0."""
    if not inputs:
        raise ShapeError("lstm_steps: empty input sequence")
    batch = inputs[0].shape[0]
    d = params.hidden_dim
    w_ih_t = transpose(params.w_ih)
    w_hh_t = transpose(params.w_hh)
    h: Optional[Tensor] = None
    c: Optional[Tensor] = None
    states = []
    for x in inputs:
        if x.shape != (batch, params.input_dim):
            raise ShapeError(f"lstm step input {x.shape}, expected ({batch}, {params.input_dim})")
        z = matmul(x, w_ih_t)
        if h is not None:
            z = add(z, matmul(h, w_hh_t))
        z = add_bias(z, params.bias)
        i = activation(slice_cols(z, 0, d), "sigmoid")
        f = activation(slice_cols(z, d, 2 * d), "sigmoid")
        g = activation(slice_cols(z, 2 * d, 3 * d), "tanh")
        o = activation(slice_cols(z, 3 * d, 4 * d), "sigmoid")
        c = mul(i, g) if c is None else add(mul(f, c), mul(i, g))
        h = mul(o, activation(c, "tanh"))
        states.append(h)
    return states


def lstm_forward(embeds: Tensor, params: LSTMParams) -> Tensor:
    """All hidden states [M x d_s] of one sequence of [M x d_in] inputs."""
    if embeds.ndim != 2 or embeds.shape[1] != params.input_dim:
        raise ShapeError(f"lstm_forward: inputs {embeds.shape} do not match input dim {params.input_dim}")
    steps = [slice_rows(embeds, t, t + 1) for t in range(embeds.shape[0])]
    hidden = stack(lstm_steps(steps, params))
    return reshape(hidden, (embeds.shape[0], params.hidden_dim))


def max_pool_time(hidden: Tensor, lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Per-dimension maximum over time: [M x d] -> [d] or [M x B x d] -> [B x d].

    ``lengths`` restricts each column block to its real tokens (batched form).
    """
    if hidden.shape[0] < 1:
        raise ShapeError("max_pool_time: empty input")
    return max_over_first_axis(hidden, lengths)


def _pool(hidden: Tensor, lengths: Sequence[int], pool_mode: PoolMode, mask_pad: bool) -> Tensor:
    if pool_mode == "last":
        return gather_time(hidden, [max(n, 1) - 1 for n in lengths])
    return max_pool_time(hidden, lengths if mask_pad else None)


def encode_batch(
    batch: Sequence[UtteranceTokens],
    params: EncoderParams,
    pool_mode: PoolMode = "max",
    mask_pad: bool = False,
) -> Tensor:
    """Encode B utterances of equal M at once -> [B x d_s]."""
    if not batch:
        raise ShapeError("encode_batch: no utterances")
    steps_count = len(batch[0].ids)
    if any(len(u.ids) != steps_count for u in batch):
        raise ShapeError("encode_batch: utterances must share one padded length")
    ids = np.array([u.ids for u in batch], dtype=np.int64)
    steps = [gather_rows(params.embedding, ids[:, t]) for t in range(steps_count)]
    hidden = stack(lstm_steps(steps, params.lstm))
    return _pool(hidden, [u.true_length for u in batch], pool_mode, mask_pad)


def encode_utterance(
    tokens: UtteranceTokens,
    params: EncoderParams,
    pool_mode: PoolMode = "max",
    mask_pad: bool = False,
) -> Tensor:
    """embed -> lstm_forward -> pooling, giving one [d_s] vector."""
    hidden = lstm_forward(embed(tokens, params.embedding), params.lstm)
    if pool_mode == "max" and not mask_pad:
        return max_pool_time(hidden)
    batched = reshape(hidden, (hidden.shape[0], 1, hidden.shape[1]))
    pooled = _pool(batched, [tokens.true_length], pool_mode, mask_pad)
    return reshape(pooled, (hidden.shape[1],))
