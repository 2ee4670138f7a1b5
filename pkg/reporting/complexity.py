"""Operation counts of the context layers as the window grows.

Utterance encoding is left out: the inputs are random utterance vectors, so
only the context layer runs. Counts come from the tape's per-stage
multiply-accumulate counters; wall time is reported alongside.
"""
import csv
import io
import logging
import time
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel

from core.exceptions import ConfigurationError
from core.tensor import ComputationTape, Tensor, constant
from model.attention import AttentionParams, attend, attend_online
from model.context_lstm import ContextLSTMParams, context_lstm

logger = logging.getLogger(__name__)

ATTENTION_STAGES = ("attention", "bias")
COLUMNS = ("n", "macs_lstm", "macs_offline", "macs_online", "wall_lstm_s", "wall_offline_s", "wall_online_s")


class ComplexityRow(BaseModel):
    n: int
    macs_lstm: int
    macs_offline: int
    macs_online: int
    wall_lstm_s: float
    wall_offline_s: float
    wall_online_s: float


def _measure(fn: Callable[[], object], stages: Sequence[str]) -> tuple[int, float]:
    tape = ComputationTape()
    started = time.perf_counter()
    with tape:
        fn()
    elapsed = time.perf_counter() - started
    return sum(tape.stage_macs.get(stage, 0) for stage in stages), elapsed


def complexity_rows(
    dim: int, lengths: Sequence[int], heads: int = 4, seed: int = 0, center_bound: float = 3.0
) -> list[ComplexityRow]:
    """One row per window length n: LSTM context, offline and online attention."""
    if not lengths or any(n < 1 for n in lengths):
        raise ConfigurationError(f"lengths must be positive, got {list(lengths)}")
    if list(lengths) != sorted(lengths):
        raise ConfigurationError(f"lengths must be ascending, got {list(lengths)}")
    if dim % heads:
        raise ConfigurationError(f"dim {dim} is not divisible by heads {heads}")

    rows = []
    for n in lengths:
        rng = np.random.default_rng(seed)
        s: Tensor = constant(rng.standard_normal((n, dim)))
        recurrent = ContextLSTMParams.initialize(dim, "lstm", rng)
        attention = AttentionParams.initialize(dim, dim // heads, heads, n, center_bound, float(n), rng)

        macs_lstm, wall_lstm = _measure(lambda: context_lstm(s, recurrent), ("context",))
        macs_offline, wall_offline = _measure(lambda: attend(s, attention, True), ATTENTION_STAGES)
        macs_online, wall_online = _measure(lambda: attend_online(s, attention, True), ATTENTION_STAGES)
        rows.append(
            ComplexityRow(
                n=n,
                macs_lstm=macs_lstm,
                macs_offline=macs_offline,
                macs_online=macs_online,
                wall_lstm_s=wall_lstm,
                wall_offline_s=wall_offline,
                wall_online_s=wall_online,
            )
        )
        logger.debug(f"n={n}: lstm {macs_lstm}, offline {macs_offline}, online {macs_online}")
    return rows


def rows_to_csv(rows: Sequence[ComplexityRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([getattr(row, column) for column in COLUMNS])
    return buffer.getvalue()
