"""The full recognizer: utterance encoder, context layer and classifier."""
import logging
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

from core.checkpoints import CheckpointManager
from core.exceptions import CheckpointError, ConfigurationError, ShapeError
from core.tensor import Tensor, dropout, reshape, slice_rows
from ingestion.vocab import Vocab, load_embeddings
from model.attention import AttentionParams, attend, attend_online
from model.classifier import ClassifierParams, classify
from model.context_lstm import ContextLSTMParams, context_lstm
from model.encoder import EncoderParams, UtteranceTokens, encode_batch, pad_or_truncate
from schemas.training import TrainConfig

logger = logging.getLogger(__name__)

ContextParams = Union[AttentionParams, ContextLSTMParams]


class DialogueActModel:
    """Parameters plus the vocabulary and label map they were trained with."""

    def __init__(
        self,
        config: TrainConfig,
        vocab: Vocab,
        labels: Sequence[str],
        encoder: EncoderParams,
        context: ContextParams,
        classifier: ClassifierParams,
    ):
        """Initialize model from already built parameter groups."""
        if len(set(labels)) != len(labels) or not labels:
            raise ConfigurationError(f"label map must be non-empty and unique, got {list(labels)}")
        if classifier.num_labels != len(labels):
            raise ShapeError(f"classifier has {classifier.num_labels} outputs for {len(labels)} labels")
        self.config = config
        self.vocab = vocab
        self.labels = list(labels)
        self.label_to_id = {label: i for i, label in enumerate(self.labels)}
        self.encoder = encoder
        self.context = context
        self.classifier = classifier

    @classmethod
    def build(
        cls,
        config: TrainConfig,
        vocab: Vocab,
        labels: Sequence[str],
        rng: Optional[np.random.Generator] = None,
    ) -> "DialogueActModel":
        """Fresh parameters drawn from ``rng`` (seeded from the config by default)."""
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        encoder = EncoderParams.initialize(len(vocab), config.embed_dim, config.hidden_dim, rng)
        if config.embedding_path:
            load_embeddings(config.embedding_path, vocab, encoder.embedding.data)

        context: ContextParams
        if config.context_layer == "attention":
            context = AttentionParams.initialize(
                model_dim=config.hidden_dim,
                head_dim=config.resolved_head_dim,
                heads=config.heads,
                n_max=config.resolved_n_max,
                center_bound=config.center_bound,
                width_scale=config.resolved_width_scale,
                rng=rng,
                key_mean_mode=config.key_mean_mode,
            )
        else:
            context = ContextLSTMParams.initialize(config.hidden_dim, config.context_layer, rng)

        classifier = ClassifierParams.initialize(config.hidden_dim, config.ffn_dim, len(labels), rng)
        model = cls(config, vocab, labels, encoder, context, classifier)
        logger.info(
            f"Built {config.context_layer} model: {model.num_parameters()} parameters, "
            f"{len(vocab)} tokens, {len(labels)} labels"
        )
        return model

    def parameters(self) -> dict[str, Tensor]:
        """Named trainable tensors in a fixed order."""
        return {**self.encoder.parameters(), **self.context.parameters(), **self.classifier.parameters()}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.parameters().items()}

    def restore(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.data[...] = arrays[name]

    def tokenize(self, text: str) -> UtteranceTokens:
        return pad_or_truncate(self.vocab.encode(text), self.config.max_tokens)

    def label_ids(self, acts: Sequence[str]) -> list[int]:
        return [self.label_to_id[act] for act in acts]

    def decode(self, logits: Tensor) -> list[str]:
        """Arg-max label per row (ties go to the lower label id)."""
        rows = logits.data.reshape(-1, len(self.labels))
        return [self.labels[int(i)] for i in rows.argmax(axis=1)]

    # Forward passes

    def _encode(self, tokens: Sequence[UtteranceTokens], rng: Optional[np.random.Generator]) -> Tensor:
        s = encode_batch(tokens, self.encoder, self.config.pool_mode, self.config.mask_pad_in_pool)
        if rng is not None and self.config.dropout > 0:
            s = dropout(s, self.config.dropout, rng)
        return s

    def _contextualize(self, s: Tensor, use_bias: Optional[bool] = None) -> tuple[Tensor, Optional[list[np.ndarray]]]:
        if isinstance(self.context, AttentionParams):
            bias = self.config.use_bias if use_bias is None else use_bias
            return attend(s, self.context, bias)
        return context_lstm(s, self.context), None

    def forward_window(
        self, tokens: Sequence[UtteranceTokens], rng: Optional[np.random.Generator] = None
    ) -> Tensor:
        """Logits [N x |labels|] for every utterance of one window.

        Passing ``rng`` switches on training-time dropout.
        """
        out, _ = self._contextualize(self._encode(tokens, rng))
        return classify(out, self.classifier)

    def forward_windows(
        self, windows: Sequence[Sequence[UtteranceTokens]], rng: Optional[np.random.Generator] = None
    ) -> list[Tensor]:
        """Like ``forward_window`` for several windows, encoding all utterances in one batch."""
        flat = [u for window in windows for u in window]
        s = self._encode(flat, rng)
        logits = []
        start = 0
        for window in windows:
            stop = start + len(window)
            out, _ = self._contextualize(slice_rows(s, start, stop))
            logits.append(classify(out, self.classifier))
            start = stop
        return logits

    def predict_last(self, tokens: Sequence[UtteranceTokens]) -> Tensor:
        """Logits [|labels|] for the last utterance using only the given history."""
        s = self._encode(tokens, None)
        if isinstance(self.context, AttentionParams):
            out = attend_online(s, self.context, self.config.use_bias)
        else:
            full = context_lstm(s, self.context)
            out = reshape(slice_rows(full, s.shape[0] - 1, s.shape[0]), (s.shape[1],))
        return classify(out, self.classifier)

    def attention_weights(
        self, tokens: Sequence[UtteranceTokens], use_bias: Optional[bool] = None
    ) -> list[np.ndarray]:
        """Per-head post-softmax [N x N] matrices for one window."""
        if not isinstance(self.context, AttentionParams):
            raise ConfigurationError(f"{self.config.context_layer} context layer has no attention weights")
        _, weights = self._contextualize(self._encode(tokens, None), use_bias)
        return weights

    # Persistence

    def save(self, path: Union[str, Path]) -> Path:
        header = {f"config.{key}": value for key, value in self.config.model_dump(mode="json").items()}
        header["vocab"] = self.vocab.id_to_token
        header["labels"] = self.labels
        return CheckpointManager(path).save(self.snapshot(), header)

    @classmethod
    def load(
        cls, path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None
    ) -> "DialogueActModel":
        """Rebuild a model from a checkpoint.

        ``overrides`` replace stored config values before the shapes are
        built; a stored array that no longer fits is reported with both shapes.
        """
        contents = CheckpointManager(path).load()
        stored = {
            key[len("config."):]: value for key, value in contents.header.items() if key.startswith("config.")
        }
        try:
            vocab = Vocab(contents.header["vocab"])
            labels = contents.header["labels"]
        except KeyError as e:
            raise CheckpointError(f"{path}: header lacks {e.args[0]!r}") from e
        except ValueError as e:
            raise CheckpointError(f"{path}: bad vocabulary: {e}") from e
        try:
            config = TrainConfig(**{**stored, **dict(overrides or {})})
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: stored configuration is invalid: {e}") from e

        model = cls.build(config.model_copy(update={"embedding_path": None}), vocab, labels)
        model.config = config
        params = model.parameters()
        missing = sorted(set(params) - set(contents.arrays))
        extra = sorted(set(contents.arrays) - set(params))
        if missing or extra:
            raise CheckpointError(f"{path}: parameter names differ: missing {missing}, unexpected {extra}")
        for name, tensor in params.items():
            array = contents.arrays[name]
            if array.shape != tensor.shape:
                raise CheckpointError(
                    f"{path}: parameter {name} has shape {array.shape} in the checkpoint "
                    f"but {tensor.shape} in the requested model"
                )
            tensor.data[...] = array
        logger.info(f"Loaded checkpoint {path} ({len(params)} tensors)")
        return model
