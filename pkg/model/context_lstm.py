"""Recurrent context layers used as baselines in place of attention.

``lstm`` runs one LSTM forward over the window's utterance vectors;
``blstm`` adds a second LSTM over the reversed window and sums the two
state sequences. Both add the input back as a residual.
"""
import logging
from typing import Literal, Optional

import numpy as np

from core.exceptions import ShapeError
from core.tensor import Tensor, add, gather_rows, tape_stage
from model.encoder import LSTMParams, lstm_forward

logger = logging.getLogger(__name__)

ContextMode = Literal["lstm", "blstm"]


class ContextLSTMParams:
    def __init__(self, forward: LSTMParams, backward: Optional[LSTMParams] = None):
        if forward.input_dim != forward.hidden_dim:
            raise ShapeError(
                f"context LSTM must keep the utterance dimension: {forward.input_dim} -> {forward.hidden_dim}"
            )
        if backward is not None and (backward.input_dim, backward.hidden_dim) != (
            forward.input_dim, forward.hidden_dim
        ):
            raise ShapeError("forward and backward context LSTMs differ in shape")
        self.forward = forward
        self.backward = backward

    @property
    def mode(self) -> ContextMode:
        return "lstm" if self.backward is None else "blstm"

    @property
    def model_dim(self) -> int:
        return self.forward.hidden_dim

    @classmethod
    def initialize(cls, model_dim: int, mode: ContextMode, rng: np.random.Generator) -> "ContextLSTMParams":
        forward = LSTMParams.initialize(model_dim, model_dim, rng, "context.forward")
        backward = LSTMParams.initialize(model_dim, model_dim, rng, "context.backward") if mode == "blstm" else None
        return cls(forward, backward)

    def parameters(self) -> dict[str, Tensor]:
        named = self.forward.parameters("context.forward")
        if self.backward is not None:
            named.update(self.backward.parameters("context.backward"))
        return named


def context_lstm(s: Tensor, params: ContextLSTMParams) -> Tensor:
    """[N x d_s] -> [N x d_s] recurrent context plus residual."""
    if s.ndim != 2 or s.shape[1] != params.model_dim:
        raise ShapeError(f"context_lstm: input {s.shape} does not match model dim {params.model_dim}")
    with tape_stage("context"):
        states = lstm_forward(s, params.forward)
        if params.backward is not None:
            reverse = list(range(s.shape[0] - 1, -1, -1))
            backward_states = lstm_forward(gather_rows(s, reverse), params.backward)
            states = add(states, gather_rows(backward_states, reverse))
    return add(states, s)
