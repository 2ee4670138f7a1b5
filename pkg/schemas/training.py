"""Pydantic schemas for run configuration and metrics."""
import json
import logging
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Every hyperparameter of a run; the seed fully determines it."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Segmentation
    window: int = Field(5, ge=1, description="Sub-dialogue length (core utterances per window)")
    padding: int = Field(2, ge=0, description="Context utterances added on each side")

    # Utterance encoder
    max_tokens: int = Field(32, ge=1, description="Tokens per utterance after pad/truncate")
    embed_dim: int = Field(64, ge=1, description="Embedding dimension")
    hidden_dim: int = Field(64, ge=1, description="LSTM hidden / utterance vector dimension")
    max_vocab: int = Field(30000, ge=3, description="Vocabulary size including PAD and UNK")
    pool_mode: Literal["max", "last"] = Field("max", description="Pooling over LSTM states")
    mask_pad_in_pool: bool = Field(False, description="Pool only over real tokens")
    embedding_path: Optional[str] = Field(None, description="Optional text-format embeddings")

    # Context layer
    context_layer: Literal["attention", "lstm", "blstm"] = Field("attention")
    heads: int = Field(4, ge=1, description="Attention heads")
    head_dim: Optional[int] = Field(None, ge=1, description="Per-head dimension; hidden_dim // heads if unset")
    center_bound: float = Field(3.0, gt=0, description="Maximum center offset from its own position")
    width_scale: Optional[float] = Field(None, gt=0, description="Upper bound of the bias width; n_max if unset")
    key_mean_mode: Literal["position", "feature"] = Field("position")
    use_bias: bool = Field(True, description="Add the Gaussian locality bias to attention logits")
    n_max: Optional[int] = Field(None, ge=1, description="Longest window; window + 2*padding if unset")

    # Classifier
    ffn_dim: int = Field(64, ge=1, description="Hidden units of the two-layer classifier")

    # Optimization
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(8, ge=1, description="Windows per update")
    seed: int = Field(13, ge=0)
    clip_norm: float = Field(5.0, gt=0)
    dropout: float = Field(0.0, ge=0, lt=1)
    patience: Optional[int] = Field(None, ge=1, description="Epochs without improvement before stopping")
    loss_divisor: Literal["unmasked", "window"] = Field("unmasked")

    # Evaluation
    online: bool = Field(False, description="Report the online setting as the headline accuracy")

    @model_validator(mode="after")
    def check_dimensions(self) -> "TrainConfig":
        if self.head_dim is None and self.hidden_dim % self.heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}; set head_dim"
            )
        if self.n_max is not None and self.n_max < self.window + 2 * self.padding:
            raise ValueError(
                f"n_max {self.n_max} is shorter than window + 2*padding = "
                f"{self.window + 2 * self.padding}"
            )
        return self

    @property
    def resolved_head_dim(self) -> int:
        return self.head_dim or self.hidden_dim // self.heads

    @property
    def resolved_n_max(self) -> int:
        return self.n_max or self.window + 2 * self.padding

    @property
    def resolved_width_scale(self) -> float:
        return float(self.width_scale or self.resolved_n_max)

    @classmethod
    def resolve(
        cls,
        config_file: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> tuple["TrainConfig", dict[str, str]]:
        """Apply defaults < flat JSON file < explicit overrides.

        Returns the config and, per key, the layer that set it.
        """
        values: dict[str, Any] = {}
        sources = {name: "default" for name in cls.model_fields}

        if config_file is not None:
            try:
                loaded = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigurationError(f"cannot read config file {config_file}: {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"config file {config_file} must hold a flat JSON object")
            values.update(loaded)
            sources.update({key: "file" for key in loaded})

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            values[key] = value
            sources[key] = "flag"

        unknown = sorted(set(values) - set(cls.model_fields))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        try:
            config = cls(**values)
        except ValidationError as e:
            raise ConfigurationError(f"invalid configuration: {e}") from e
        return config, {key: sources[key] for key in cls.model_fields}


class ClassCounts(BaseModel):
    """Evaluated and correctly predicted utterances of one label."""

    total: int = 0
    correct: int = 0


class Metrics(BaseModel):
    """Accuracy over evaluated (unmasked) utterances."""

    setting: Literal["offline", "online", "train"] = "offline"
    accuracy: float = Field(0.0, ge=0.0, le=1.0)
    total: int = 0
    correct: int = 0
    per_class: dict[str, ClassCounts] = Field(default_factory=dict)
    loss_history: list[float] = Field(default_factory=list)

    @classmethod
    def from_predictions(
        cls,
        predicted: list[str],
        gold: list[str],
        setting: str = "offline",
        loss_history: Optional[list[float]] = None,
    ) -> "Metrics":
        per_class: dict[str, ClassCounts] = {}
        correct = 0
        for p, g in zip(predicted, gold):
            counts = per_class.setdefault(g, ClassCounts())
            counts.total += 1
            if p == g:
                counts.correct += 1
                correct += 1
        total = len(gold)
        return cls(
            setting=setting,
            accuracy=correct / total if total else 0.0,
            total=total,
            correct=correct,
            per_class=dict(sorted(per_class.items())),
            loss_history=list(loss_history or []),
        )


class EpochMetrics(BaseModel):
    """Summary of one training epoch."""

    epoch: int
    train_loss: float
    train_accuracy: float
    valid_accuracy: Optional[float] = None


class TrainHistory(BaseModel):
    """Per-epoch record of a run and the epoch that was kept."""

    epochs: list[EpochMetrics] = Field(default_factory=list)
    best_epoch: int = 0
    best_valid_accuracy: Optional[float] = None
    loss_history: list[float] = Field(default_factory=list)
    train_metrics: Optional[Metrics] = None
    stopped_early: bool = False


class RunReport(BaseModel):
    """Content of the metrics file written by ``train``."""

    config: dict[str, Any]
    config_sources: dict[str, str]
    history: TrainHistory
    test_offline: Optional[Metrics] = None
    test_online: Optional[Metrics] = None
    sweep: list[dict[str, Any]] = Field(default_factory=list)
