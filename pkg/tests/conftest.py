"""Test configuration and fixtures."""
import numpy as np
import pytest

from ingestion.loader import write_corpus
from ingestion.sources.synthetic import gen_synthetic
from ingestion.vocab import build_vocab
from model.network import DialogueActModel
from schemas.corpus import CorpusSplits, Dialogue, Utterance
from schemas.synthetic import SyntheticSpec
from schemas.training import TrainConfig


def make_dialogue(dialogue_id: str, acts_and_texts) -> Dialogue:
    """Dialogue from (act, text) pairs with alternating speakers."""
    return Dialogue(
        id=dialogue_id,
        utterances=tuple(
            Utterance(speaker="AB"[i % 2], text=text, act=act) for i, (act, text) in enumerate(acts_and_texts)
        ),
    )


@pytest.fixture
def rng():
    """Seeded generator per test."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small dimensions that keep gradient checks fast."""
    return TrainConfig(
        window=3,
        padding=1,
        max_tokens=5,
        embed_dim=6,
        hidden_dim=8,
        heads=2,
        ffn_dim=6,
        epochs=2,
        batch_size=4,
        seed=5,
    )


@pytest.fixture(scope="session")
def small_corpus():
    """A few synthetic dialogues per split."""
    spec = SyntheticSpec(train_dialogues=16, valid_dialogues=4, test_dialogues=4, seed=11)
    return gen_synthetic(spec).splits


@pytest.fixture
def corpus_file(tmp_path, small_corpus):
    """The small corpus written as JSON lines."""
    path = tmp_path / "corpus.jsonl"
    write_corpus(small_corpus, path)
    return path


@pytest.fixture
def tiny_model(tiny_config, small_corpus):
    """Untrained model over the small corpus with every parameter randomized."""
    vocab = build_vocab(small_corpus.train, tiny_config.max_vocab)
    labels = sorted(small_corpus.label_set())
    model = DialogueActModel.build(tiny_config, vocab, labels)
    generator = np.random.default_rng(99)
    for p in model.parameters().values():
        p.data[...] = generator.normal(scale=0.4, size=p.shape)
    return model


@pytest.fixture
def toy_splits():
    """Hand-written corpus with two labels."""
    train = [
        make_dialogue("t1", [("Q", "how are you ?"), ("A", "fine thanks"), ("Q", "and you ?")]),
        make_dialogue("t2", [("A", "good"), ("Q", "really ?")]),
    ]
    valid = [make_dialogue("v1", [("Q", "why ?"), ("A", "because")])]
    test = [make_dialogue("x1", [("Q", "who ?"), ("A", "me"), ("A", "unknown word")])]
    return CorpusSplits(train=train, valid=valid, test=test)
