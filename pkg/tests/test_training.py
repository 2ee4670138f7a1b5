"""Tests for the optimizer, batching, the training loop and evaluation."""
import math

import numpy as np
import pytest

from core.exceptions import (
    ConfigurationError,
    CorpusFormatError,
    NonFiniteError,
    SegmentationError,
    TrainingDivergedError,
)
from core.tensor import parameter
from schemas.corpus import CorpusSplits
from schemas.training import Metrics, TrainConfig
from tests.conftest import make_dialogue
from training import trainer as trainer_module
from training.optimizer import Adam, global_norm
from training.trainer import (
    OnlinePredictor,
    Trainer,
    check_labels,
    evaluate,
    make_batches,
    train,
    window_examples,
)


class TestAdam:
    """Test parameter updates."""

    def test_first_step_moves_by_learning_rate(self):
        """Bias correction makes the first step close to lr in the gradient's direction."""
        x = parameter([1.0, -1.0])
        opt = Adam({"x": x}, learning_rate=0.1)
        x.grad = np.array([0.5, -2.0])
        opt.step()
        np.testing.assert_allclose(x.data, [0.9, -0.9], atol=1e-6)
        assert x.grad is None
        assert opt.state.step == 1

    def test_clipping(self):
        """Gradients above the clip norm are rescaled; the old norm is returned."""
        x = parameter([0.0, 0.0])
        opt = Adam({"x": x}, clip_norm=1.0)
        x.grad = np.array([3.0, 4.0])
        assert opt.clip_gradients() == pytest.approx(5.0)
        np.testing.assert_allclose(x.grad, [0.6, 0.8])

    def test_non_finite_gradient(self):
        """An infinite gradient norm is refused."""
        x = parameter([0.0])
        opt = Adam({"x": x})
        x.grad = np.array([np.inf])
        with pytest.raises(NonFiniteError):
            opt.step()

    def test_missing_gradients_are_skipped(self):
        """Parameters without gradients keep their values."""
        x, y = parameter([1.0]), parameter([2.0])
        opt = Adam({"x": x, "y": y}, learning_rate=0.1)
        x.grad = np.array([1.0])
        opt.step()
        assert y.data[0] == 2.0
        assert global_norm({"x": x, "y": y}) == 0.0


class TestBatching:
    """Test window examples and batches."""

    def test_examples_follow_windows(self, tiny_model, small_corpus):
        """Every core utterance of the split is covered once."""
        examples = window_examples(small_corpus.train, tiny_model, 3, 1)
        assert sum(e.window.core_size for e in examples) == sum(len(d) for d in small_corpus.train)
        for e in examples:
            assert len(e.tokens) == len(e.labels) == len(e.window)

    def test_batches_share_length(self, tiny_model, small_corpus):
        """Batches never mix window lengths and keep every example once."""
        examples = window_examples(small_corpus.train, tiny_model, 3, 1)
        batches = make_batches(examples, 4, np.random.default_rng(0))
        assert sum(len(b) for b in batches) == len(examples)
        for batch in batches:
            assert 1 <= len(batch) <= 4
            assert len({len(e.window) for e in batch}) == 1

    def test_batches_are_seeded(self, tiny_model, small_corpus):
        """The same seed gives the same batch order."""
        examples = window_examples(small_corpus.train, tiny_model, 3, 1)

        def order(seed):
            return [[(e.window.dialogue_id, e.window.window_index) for e in b]
                    for b in make_batches(examples, 4, np.random.default_rng(seed))]

        assert order(1) == order(1)


class TestLabels:
    """Test the label map checks."""

    def test_sorted_training_labels(self, toy_splits):
        """The label map is the sorted training label set."""
        assert check_labels(toy_splits) == ["A", "Q"]

    def test_empty_training_split(self):
        """Training needs at least one dialogue."""
        with pytest.raises(CorpusFormatError, match="empty"):
            check_labels(CorpusSplits(valid=[make_dialogue("v", [("A", "x")])]))

    def test_unseen_label(self, toy_splits):
        """Validation labels must occur in training."""
        toy_splits.valid.append(make_dialogue("v2", [("Z", "odd")]))
        with pytest.raises(CorpusFormatError, match="valid"):
            check_labels(toy_splits)

    def test_trainer_rejects_before_training(self, tiny_config, toy_splits):
        """Bad labels stop the trainer before any update."""
        toy_splits.test.append(make_dialogue("x2", [("Z", "odd")]))
        with pytest.raises(CorpusFormatError):
            Trainer(tiny_config, toy_splits)


class TestTrainer:
    """Test the training loop."""

    def test_first_loss_is_uniform(self, tiny_config, small_corpus):
        """A zero second classifier layer gives ln |labels| on the first batch."""
        trainer = Trainer(tiny_config, small_corpus)
        batch = make_batches(trainer.examples, tiny_config.batch_size, np.random.default_rng(0))[0]
        _, loss, _, _ = trainer._batch_loss(batch)
        assert loss.item() == pytest.approx(math.log(len(trainer.labels)), abs=1e-6)

    def test_same_seed_same_run(self, tiny_config, small_corpus):
        """Two runs with one seed agree exactly."""
        config = tiny_config.model_copy(update={"epochs": 1})
        first, first_history = train(small_corpus, config)
        second, second_history = train(small_corpus, config)
        assert first_history.loss_history == second_history.loss_history
        for name, p in first.parameters().items():
            np.testing.assert_array_equal(p.data, second.parameters()[name].data)

    def test_loss_decreases(self, tiny_config, small_corpus):
        """Training lowers the epoch loss."""
        config = tiny_config.model_copy(update={"epochs": 3, "learning_rate": 0.01})
        _, history = train(small_corpus, config)
        assert history.epochs[-1].train_loss < history.epochs[0].train_loss

    def test_train_metrics_recorded(self, tiny_config, small_corpus):
        """The kept epoch reports train-setting accuracy, per-act counts and its batch losses."""
        config = tiny_config.model_copy(update={"epochs": 2})
        trainer = Trainer(config, small_corpus)
        history = trainer.fit()
        metrics = history.train_metrics
        assert metrics is not None and metrics.setting == "train"
        assert metrics.total == sum(len(d) for d in small_corpus.train)
        assert sum(c.total for c in metrics.per_class.values()) == metrics.total
        best = history.epochs[history.best_epoch - 1]
        assert metrics.accuracy == pytest.approx(best.train_accuracy)
        assert metrics.loss_history
        assert math.fsum(metrics.loss_history) / len(metrics.loss_history) == pytest.approx(best.train_loss)

    @pytest.mark.parametrize("context_layer", ["lstm", "blstm"])
    def test_recurrent_context_layers_train(self, tiny_config, small_corpus, context_layer):
        """The recurrent baselines run through the same loop."""
        config = tiny_config.model_copy(update={"epochs": 1, "context_layer": context_layer})
        model, history = train(small_corpus, config)
        assert len(history.epochs) == 1
        assert not any(name.startswith("attention") for name in model.parameters())

    def test_dropout_run(self, tiny_config, small_corpus):
        """Dropout only changes training, evaluation stays deterministic."""
        config = tiny_config.model_copy(update={"epochs": 1, "dropout": 0.2})
        model, _ = train(small_corpus, config)
        assert evaluate(small_corpus.test, model) == evaluate(small_corpus.test, model)

    def test_patience_stops_early(self, tiny_config, small_corpus, monkeypatch):
        """No improvement for ``patience`` epochs ends the run."""
        monkeypatch.setattr(trainer_module, "evaluate", lambda *args, **kwargs: Metrics(accuracy=0.5))
        config = tiny_config.model_copy(update={"epochs": 5, "patience": 1})
        _, history = train(small_corpus, config)
        assert len(history.epochs) == 2
        assert history.stopped_early
        assert history.best_epoch == 1

    def test_best_epoch_is_kept(self, tiny_config, small_corpus, monkeypatch):
        """Parameters come from the epoch with the best validation accuracy."""
        scores = iter([0.4, 0.7, 0.6])
        monkeypatch.setattr(trainer_module, "evaluate", lambda *args, **kwargs: Metrics(accuracy=next(scores)))
        snapshots = []
        original = Trainer.train_epoch

        def recording(self, epoch):
            record = original(self, epoch)
            snapshots.append(self.model.snapshot())
            return record

        monkeypatch.setattr(Trainer, "train_epoch", recording)
        config = tiny_config.model_copy(update={"epochs": 3})
        model, history = train(small_corpus, config)
        assert history.best_epoch == 2
        assert history.best_valid_accuracy == 0.7
        for name, p in model.parameters().items():
            np.testing.assert_array_equal(p.data, snapshots[1][name])

    def test_divergence_is_reported(self, tiny_config, small_corpus, monkeypatch):
        """A non-finite update names the epoch and batch."""
        def explode(self):
            raise NonFiniteError("gradient norm is nan")

        monkeypatch.setattr(trainer_module.Adam, "step", explode)
        with pytest.raises(TrainingDivergedError, match="epoch 1 batch 1"):
            train(small_corpus, tiny_config)


class TestEvaluate:
    """Test offline and online evaluation."""

    def test_settings_count_every_utterance(self, tiny_model, small_corpus):
        """Both settings evaluate each test utterance once."""
        utterances = sum(len(d) for d in small_corpus.test)
        offline = evaluate(small_corpus.test, tiny_model, "offline")
        online = evaluate(small_corpus.test, tiny_model, "online")
        assert offline.total == online.total == utterances
        assert sum(c.total for c in offline.per_class.values()) == utterances
        assert 0.0 <= offline.accuracy <= 1.0

    def test_constant_predictor(self, tiny_config, small_corpus):
        """An untrained model predicts the first label everywhere."""
        model = Trainer(tiny_config, small_corpus).model
        acts = [act for d in small_corpus.test for act in d.acts]
        expected = acts.count(model.labels[0]) / len(acts)
        for setting in ("offline", "online"):
            assert evaluate(small_corpus.test, model, setting).accuracy == pytest.approx(expected)

    def test_unknown_label_rejected(self, tiny_model):
        """Evaluation labels must be in the model's label map."""
        with pytest.raises(CorpusFormatError):
            evaluate([make_dialogue("x", [("NOPE", "w1")])], tiny_model)

    def test_unknown_setting(self, tiny_model, small_corpus):
        """Only offline and online exist."""
        with pytest.raises(ValueError):
            evaluate(small_corpus.test, tiny_model, "sideways")


class TestOnlinePredictor:
    """Test streaming prediction."""

    def test_matches_online_evaluation(self, tiny_model, small_corpus):
        """Pushing utterances one by one reproduces the online accuracy."""
        predicted, gold = [], []
        predictor = OnlinePredictor(tiny_model)
        for dialogue in small_corpus.test:
            predictor.reset()
            for u in dialogue.utterances:
                predicted.append(predictor.push(u.text))
                gold.append(u.act)
        expected = Metrics.from_predictions(predicted, gold, "online")
        assert evaluate(small_corpus.test, tiny_model, "online") == expected

    def test_uses_only_preceding_context(self, tiny_model, small_corpus):
        """Each prediction equals the last row of an offline pass over the history suffix."""
        dialogue = small_corpus.test[0]
        padding = tiny_model.config.padding
        tokens = [tiny_model.tokenize(u.text) for u in dialogue.utterances]
        predictor = OnlinePredictor(tiny_model)
        for t, u in enumerate(dialogue.utterances):
            history = tokens[max(0, t - padding): t + 1]
            assert predictor.push(u.text) == tiny_model.decode(tiny_model.forward_window(history))[-1]

    def test_first_utterance_stands_alone(self, tiny_model):
        """The first prediction sees a window of one."""
        predictor = OnlinePredictor(tiny_model, padding=5)
        label = predictor.push("hello there")
        assert label == tiny_model.decode(tiny_model.predict_last([tiny_model.tokenize("hello there")]))[0]
        assert len(predictor.history) == 1

    def test_history_is_bounded(self, tiny_model):
        """A long stream keeps only the newest P + 1 utterances."""
        predictor = OnlinePredictor(tiny_model, padding=1)
        for i in range(500):
            predictor.push(f"w{i % 7} w{i % 3}")
            assert len(predictor.history) <= 2
        assert len(predictor.history) == 2
        pair = [tiny_model.tokenize("w1 w0"), tiny_model.tokenize("w2 w2")]
        expected = tiny_model.decode(tiny_model.forward_window(pair))[-1]
        predictor.push("w1 w0")
        assert predictor.push("w2 w2") == expected

    def test_negative_padding(self, tiny_model):
        """Padding below zero is rejected up front."""
        with pytest.raises(SegmentationError):
            OnlinePredictor(tiny_model, padding=-1)


class TestTrainConfig:
    """Test configuration layering."""

    def test_flags_override_file_override_defaults(self, tmp_path):
        """Each key reports the layer that set it."""
        path = tmp_path / "config.json"
        path.write_text('{"window": 3, "padding": 1}', encoding="utf-8")
        config, sources = TrainConfig.resolve(path, {"padding": 0, "epochs": None})
        assert (config.window, config.padding, config.epochs) == (3, 0, 10)
        assert (sources["window"], sources["padding"], sources["epochs"]) == ("file", "flag", "default")

    def test_unknown_key(self, tmp_path):
        """Keys that are not options are rejected."""
        path = tmp_path / "config.json"
        path.write_text('{"windw": 3}', encoding="utf-8")
        with pytest.raises(ConfigurationError, match="windw"):
            TrainConfig.resolve(path)

    def test_invalid_value(self):
        """Constraint violations become configuration errors."""
        with pytest.raises(ConfigurationError, match="invalid"):
            TrainConfig.resolve(None, {"hidden_dim": 10, "heads": 4})

    def test_derived_values(self):
        """n_max and the width scale default to W + 2P."""
        config = TrainConfig(window=5, padding=2, hidden_dim=64, heads=4)
        assert (config.resolved_n_max, config.resolved_width_scale, config.resolved_head_dim) == (9, 9.0, 16)
