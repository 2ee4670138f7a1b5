"""Training loop, offline/online evaluation and the streaming predictor."""
import logging
import math
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from core.exceptions import CorpusFormatError, NonFiniteError, SegmentationError, TrainingDivergedError
from core.tensor import ComputationTape, Tensor, add, backward, no_tape, scale
from ingestion.segmenter import DialogueWindow, masked_loss, online_window, split_dialogue
from ingestion.vocab import Vocab, build_vocab
from model.encoder import UtteranceTokens
from model.network import DialogueActModel
from schemas.corpus import CorpusSplits, Dialogue
from schemas.training import EpochMetrics, Metrics, TrainConfig, TrainHistory
from training.optimizer import Adam

logger = logging.getLogger(__name__)

Setting = Literal["offline", "online"]


@dataclass(frozen=True)
class WindowExample:
    """A window with its tokenized utterances and gold label ids."""

    window: DialogueWindow
    tokens: tuple[UtteranceTokens, ...]
    labels: tuple[int, ...]


def window_examples(
    dialogues: Sequence[Dialogue], model: DialogueActModel, window: int, padding: int
) -> list[WindowExample]:
    examples = []
    for dialogue in dialogues:
        tokens = [model.tokenize(u.text) for u in dialogue.utterances]
        labels = model.label_ids(dialogue.acts)
        for w in split_dialogue(len(dialogue), window, padding, dialogue.id):
            examples.append(
                WindowExample(
                    window=w,
                    tokens=tuple(tokens[i - 1] for i in w.indices),
                    labels=tuple(labels[i - 1] for i in w.indices),
                )
            )
    return examples


def make_batches(
    examples: Sequence[WindowExample], batch_size: int, rng: np.random.Generator
) -> list[list[WindowExample]]:
    """Group windows of equal length, shuffle inside each group, then shuffle batch order."""
    buckets: dict[int, list[WindowExample]] = defaultdict(list)
    for example in examples:
        buckets[len(example.window)].append(example)
    batches = []
    for length in sorted(buckets):
        bucket = buckets[length]
        order = rng.permutation(len(bucket))
        shuffled = [bucket[i] for i in order]
        batches.extend(shuffled[i: i + batch_size] for i in range(0, len(shuffled), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def check_labels(splits: CorpusSplits) -> list[str]:
    """Sorted training label map; other splits may not introduce new labels."""
    if not splits.train:
        raise CorpusFormatError("training split is empty")
    labels = sorted({act for d in splits.train for act in d.acts})
    known = set(labels)
    for name in ("valid", "test"):
        unknown = sorted({act for d in splits.split(name) for act in d.acts} - known)
        if unknown:
            raise CorpusFormatError(f"labels {unknown} in the {name} split do not occur in training")
    return labels


class OnlinePredictor:
    """Predict each new utterance from itself and up to P preceding ones."""

    def __init__(self, model: DialogueActModel, padding: Optional[int] = None):
        """Initialize online predictor with an empty history."""
        self.model = model
        self.padding = model.config.padding if padding is None else padding
        if self.padding < 0:
            raise SegmentationError(f"padding must be >= 0, got {self.padding}")
        self.history: deque[UtteranceTokens] = deque(maxlen=self.padding + 1)

    def reset(self) -> None:
        self.history.clear()

    def push(self, text: str) -> str:
        """Append one utterance and return the act predicted for it."""
        self.history.append(self.model.tokenize(text))
        # history holds at most P + 1 entries, so window indices are relative to it
        window = online_window(self.history, self.padding)
        tokens = [self.history[i - 1] for i in window.indices]
        with no_tape():
            logits = self.model.predict_last(tokens)
        return self.model.decode(logits)[0]


def _evaluate_offline(dialogues: Sequence[Dialogue], model: DialogueActModel, window: int, padding: int):
    predicted: list[str] = []
    gold: list[str] = []
    with no_tape():
        for example in window_examples(dialogues, model, window, padding):
            labels = model.decode(model.forward_window(example.tokens))
            for t in example.window.positions:
                predicted.append(labels[t])
                gold.append(model.labels[example.labels[t]])
    return predicted, gold


def _evaluate_online(dialogues: Sequence[Dialogue], model: DialogueActModel, padding: int):
    predicted: list[str] = []
    gold: list[str] = []
    predictor = OnlinePredictor(model, padding)
    for dialogue in dialogues:
        predictor.reset()
        for utterance in dialogue.utterances:
            predicted.append(predictor.push(utterance.text))
            gold.append(utterance.act)
    return predicted, gold


def evaluate(
    dialogues: Sequence[Dialogue],
    model: DialogueActModel,
    setting: Setting = "offline",
    padding: Optional[int] = None,
    window: Optional[int] = None,
) -> Metrics:
    """Accuracy over every utterance of ``dialogues``.

    Offline predicts all core positions of each window; online predicts each
    utterance from its preceding context only.
    """
    unknown = sorted({act for d in dialogues for act in d.acts} - set(model.labels))
    if unknown:
        raise CorpusFormatError(f"labels {unknown} are not in the model's label map")
    padding = model.config.padding if padding is None else padding
    window = model.config.window if window is None else window
    if setting == "offline":
        predicted, gold = _evaluate_offline(dialogues, model, window, padding)
    elif setting == "online":
        predicted, gold = _evaluate_online(dialogues, model, padding)
    else:
        raise ValueError(f"unknown evaluation setting: {setting!r}")
    return Metrics.from_predictions(predicted, gold, setting=setting)


class Trainer:
    """Fit a fresh model on the training split, selecting by validation accuracy."""

    def __init__(self, config: TrainConfig, splits: CorpusSplits, vocab: Optional[Vocab] = None):
        """Initialize trainer; rejects empty corpora and unseen labels before any update."""
        self.config = config
        self.splits = splits
        self.labels = check_labels(splits)
        self.vocab = vocab or build_vocab(splits.train, config.max_vocab)
        self.model = DialogueActModel.build(config, self.vocab, self.labels)
        self.optimizer = Adam(
            self.model.parameters(),
            learning_rate=config.learning_rate,
            clip_norm=config.clip_norm,
        )
        self.examples = window_examples(splits.train, self.model, config.window, config.padding)
        self.shuffle_rng = np.random.default_rng(config.seed)
        self.dropout_rng = np.random.default_rng(config.seed + 1) if config.dropout > 0 else None
        self.history = TrainHistory()
        self.epoch_metrics: Optional[Metrics] = None
        self._best_score = -math.inf

    def _batch_loss(self, batch: Sequence[WindowExample]) -> tuple[ComputationTape, Tensor, list[int], list[int]]:
        """Mean window loss of a batch plus predicted and gold ids at the unmasked positions."""
        tape = ComputationTape()
        predicted_ids: list[int] = []
        gold_ids: list[int] = []
        with tape:
            all_logits = self.model.forward_windows([e.tokens for e in batch], self.dropout_rng)
            loss: Optional[Tensor] = None
            for example, logits in zip(batch, all_logits):
                window_loss = masked_loss(
                    logits,
                    example.labels,
                    example.window.mask,
                    divisor=self.config.loss_divisor,
                    window_size=self.config.window,
                )
                loss = window_loss if loss is None else add(loss, window_loss)
                predicted = logits.data.argmax(axis=1)
                for t in example.window.positions:
                    predicted_ids.append(int(predicted[t]))
                    gold_ids.append(example.labels[t])
            loss = scale(loss, 1.0 / len(batch))
        return tape, loss, predicted_ids, gold_ids

    def train_epoch(self, epoch: int) -> EpochMetrics:
        losses: list[float] = []
        predicted: list[str] = []
        gold: list[str] = []
        for index, batch in enumerate(make_batches(self.examples, self.config.batch_size, self.shuffle_rng)):
            try:
                tape, loss, batch_predicted, batch_gold = self._batch_loss(batch)
                backward(tape, loss)
                self.optimizer.step()
            except NonFiniteError as e:
                raise TrainingDivergedError(f"epoch {epoch} batch {index + 1}: {e}") from e
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"epoch {epoch} batch {index + 1}: loss is {value}")
            losses.append(value)
            predicted.extend(self.model.labels[i] for i in batch_predicted)
            gold.extend(self.model.labels[i] for i in batch_gold)
        self.history.loss_history.extend(losses)
        self.epoch_metrics = Metrics.from_predictions(predicted, gold, setting="train", loss_history=losses)
        return EpochMetrics(
            epoch=epoch,
            train_loss=math.fsum(losses) / len(losses),
            train_accuracy=self.epoch_metrics.accuracy,
        )

    def fit(self) -> TrainHistory:
        """Run the configured epochs and restore the best-validation parameters."""
        logger.info(
            f"Training on {len(self.splits.train)} dialogues ({len(self.examples)} windows), "
            f"W={self.config.window} P={self.config.padding} context={self.config.context_layer} "
            f"use_bias={self.config.use_bias}"
        )
        best: Optional[dict[str, np.ndarray]] = None
        stale = 0
        for epoch in range(1, self.config.epochs + 1):
            started = time.perf_counter()
            record = self.train_epoch(epoch)
            if self.splits.valid:
                setting = "online" if self.config.online else "offline"
                record.valid_accuracy = evaluate(self.splits.valid, self.model, setting).accuracy
            self.history.epochs.append(record)
            logger.info(
                f"Epoch {epoch}/{self.config.epochs}: loss {record.train_loss:.4f}, "
                f"train acc {record.train_accuracy:.4f}, valid acc "
                f"{'n/a' if record.valid_accuracy is None else f'{record.valid_accuracy:.4f}'} "
                f"({time.perf_counter() - started:.1f}s)",
                extra={"epoch": epoch, "train_loss": record.train_loss, "valid_accuracy": record.valid_accuracy},
            )

            score = record.valid_accuracy if record.valid_accuracy is not None else -record.train_loss
            if score > self._best_score:
                self._best_score = score
                self.history.best_epoch = epoch
                self.history.best_valid_accuracy = record.valid_accuracy
                self.history.train_metrics = self.epoch_metrics
                best = self.model.snapshot()
                stale = 0
            else:
                stale += 1
                if self.config.patience is not None and stale >= self.config.patience:
                    logger.info(f"No validation improvement for {stale} epochs; stopping")
                    self.history.stopped_early = True
                    break

        if best is not None:
            self.model.restore(best)
        logger.info(f"Kept parameters from epoch {self.history.best_epoch}")
        return self.history


def train(splits: CorpusSplits, config: TrainConfig) -> tuple[DialogueActModel, TrainHistory]:
    trainer = Trainer(config, splits)
    history = trainer.fit()
    return trainer.model, history
