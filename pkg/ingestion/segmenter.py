"""Sliding-window segmentation of dialogues and the masked window loss.

Global utterance indices are 1-based, matching how windows are described:
window k covers core utterances ((k-1)*W, k*W] plus up to P context
utterances on each side, clamped to the dialogue.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

from core.exceptions import SegmentationError
from core.tensor import Tensor, cross_entropy, scale

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DialogueWindow:
    """One sub-dialogue: listed utterance indices and their loss mask."""

    dialogue_id: str
    window_index: int
    indices: tuple[int, ...]
    mask: tuple[int, ...]
    core_range: tuple[int, int]

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def positions(self) -> list[int]:
        """0-based positions (within the window) whose mask is 1."""
        return [t for t, m in enumerate(self.mask) if m]

    @property
    def core_size(self) -> int:
        return sum(self.mask)


def _window(dialogue_id: str, k: int, first: int, last: int, core: tuple[int, int]) -> DialogueWindow:
    indices = tuple(range(first, last + 1))
    mask = tuple(int(core[0] <= i <= core[1]) for i in indices)
    return DialogueWindow(dialogue_id, k, indices, mask, core)


def split_dialogue(n: int, window: int, padding: int, dialogue_id: str = "") -> list[DialogueWindow]:
    """Cut ``n`` utterances into ceil(n / window) padded windows."""
    if n < 1:
        raise SegmentationError(f"dialogue must have at least one utterance, got {n}")
    if window < 1:
        raise SegmentationError(f"window must be >= 1, got {window}")
    if padding < 0:
        raise SegmentationError(f"padding must be >= 0, got {padding}")

    windows = []
    for k in range(1, math.ceil(n / window) + 1):
        core = ((k - 1) * window + 1, min(n, k * window))
        first = max(1, (k - 1) * window - padding + 1)
        last = min(n, k * window + padding)
        windows.append(_window(dialogue_id, k, first, last, core))
    return windows


def online_window(history: Sequence, padding: int, dialogue_id: str = "") -> DialogueWindow:
    """Window of the newest utterance and up to ``padding`` preceding ones."""
    if not history:
        raise SegmentationError("online window needs a non-empty history")
    if padding < 0:
        raise SegmentationError(f"padding must be >= 0, got {padding}")
    n = len(history)
    return _window(dialogue_id, n, max(1, n - padding), n, (n, n))


def masked_loss(
    logits: Tensor,
    labels: Sequence[int],
    mask: Sequence[int],
    divisor: Literal["unmasked", "window"] = "unmasked",
    window_size: Optional[int] = None,
) -> Tensor:
    """Cross-entropy over mask-1 positions, averaged.

    ``divisor="unmasked"`` divides by the number of mask-1 positions;
    ``"window"`` divides by ``window_size`` as the literal formula does.
    Mask-0 positions get an exactly zero gradient.
    """
    if len(labels) != logits.shape[0] or len(mask) != logits.shape[0]:
        raise SegmentationError(
            f"masked_loss: {logits.shape[0]} rows, {len(labels)} labels, {len(mask)} mask entries"
        )
    if any(m not in (0, 1) for m in mask):
        raise SegmentationError(f"masked_loss: mask must be 0/1, got {list(mask)}")
    count = sum(mask)
    if count == 0:
        raise SegmentationError("masked_loss: mask is all zero, window carries no training signal")
    if divisor == "window":
        if not window_size:
            raise SegmentationError("masked_loss: divisor='window' needs window_size")
        count = window_size
    return scale(cross_entropy(logits, labels, [float(m) for m in mask]), 1.0 / count)
