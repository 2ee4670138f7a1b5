"""Synthetic context benchmark: local context is what separates ANSWER from STATEMENT."""
import numpy as np
import pytest

from ingestion.segmenter import split_dialogue
from ingestion.sources.synthetic import gen_synthetic
from model.network import DialogueActModel
from reporting.heatmap import head_mean, long_range_mass
from schemas.synthetic import SyntheticSpec
from schemas.training import TrainConfig
from training.trainer import evaluate, train

pytestmark = pytest.mark.slow

CONTEXT_FREE_BOUND = 0.68
CONTEXT_TARGET = 0.90


@pytest.fixture(scope="module")
def corpus():
    return gen_synthetic(SyntheticSpec())


@pytest.fixture(scope="module")
def context_model(corpus):
    model, _ = train(corpus.splits, TrainConfig(window=5, padding=2, use_bias=True))
    return model


@pytest.fixture(scope="module")
def reloaded_model(context_model, tmp_path_factory):
    path = context_model.save(tmp_path_factory.mktemp("benchmark") / "model.ckpt")
    return DialogueActModel.load(path)


class TestSyntheticBenchmark:
    """Test that the model uses neighbouring utterances."""

    def test_generator_ceiling(self, corpus):
        """The default corpus keeps context-free classifiers below the bound."""
        assert corpus.ceiling < CONTEXT_FREE_BOUND

    def test_single_utterance_windows_stay_at_ceiling(self, corpus):
        """W=1, P=0 cannot tell answers from statements."""
        model, _ = train(corpus.splits, TrainConfig(window=1, padding=0))
        assert evaluate(corpus.splits.test, model, "offline").accuracy <= CONTEXT_FREE_BOUND

    def test_local_context_solves_the_task(self, corpus, context_model):
        """W=5, P=2 with the locality bias clears the target."""
        assert evaluate(corpus.splits.test, context_model, "offline").accuracy >= CONTEXT_TARGET

    def test_online_not_better_than_offline(self, corpus, context_model):
        """Dropping the following utterances never helps by more than noise."""
        offline = evaluate(corpus.splits.test, context_model, "offline").accuracy
        online = evaluate(corpus.splits.test, context_model, "online").accuracy
        assert online <= offline + 0.02


class TestTrainedLocality:
    """Test the attention of a trained, saved and reloaded checkpoint."""

    def test_bias_lowers_long_range_mass(self, corpus, reloaded_model):
        """The locality bias moves attention mass inside C + 2 positions."""
        config = reloaded_model.config
        full = config.window + 2 * config.padding
        distance = config.center_bound + 2
        biased, unbiased = [], []
        for dialogue in corpus.splits.test:
            for window in split_dialogue(len(dialogue), config.window, config.padding, dialogue.id):
                if len(window.indices) != full:
                    continue
                tokens = [reloaded_model.tokenize(dialogue.utterances[i - 1].text) for i in window.indices]
                on = head_mean(reloaded_model.attention_weights(tokens, use_bias=True))
                off = head_mean(reloaded_model.attention_weights(tokens, use_bias=False))
                biased.append(long_range_mass(on, distance))
                unbiased.append(long_range_mass(off, distance))
            if len(biased) >= 20:
                break
        assert biased
        assert np.mean(biased) < np.mean(unbiased)
