"""Synthetic dialogues whose acts can only be recovered with local context.

Rules:
  * the first utterance is a GREETING drawn from greeting-only words;
  * an utterance ending with "?" is a QUESTION;
  * the utterance right after a GREETING or a QUESTION is an ANSWER;
  * a dialogue never ends on a QUESTION, so every QUESTION is answered;
  * everything else is a STATEMENT.
ANSWER and STATEMENT bodies come from the same word distribution, so a
classifier that sees one utterance at a time cannot tell them apart.
"""
import logging
import math
from typing import Mapping

import numpy as np
from pydantic import BaseModel

from schemas.corpus import CorpusSplits, Dialogue, Utterance
from schemas.synthetic import ANSWER, GREETING, QUESTION, STATEMENT, SYNTHETIC_ACTS, SyntheticSpec

logger = logging.getLogger(__name__)

QUESTION_MARK = "?"
_GREETING_WORDS = ("hello", "hi", "hey", "greetings", "welcome", "howdy")


def context_free_ceiling(marginals: Mapping[str, float]) -> float:
    """Best accuracy of a classifier that sees single utterances.

    GREETING and QUESTION are identifiable from their own words; ANSWER and
    STATEMENT are not, so the best such classifier always guesses the more
    frequent of the two.
    """
    unknown = set(marginals) - set(SYNTHETIC_ACTS)
    if unknown:
        raise ValueError(f"unknown acts in marginals: {sorted(unknown)}")
    total = sum(marginals.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"act frequencies must sum to 1, got {total}")
    p = {act: float(marginals.get(act, 0.0)) for act in SYNTHETIC_ACTS}
    return p[GREETING] + p[QUESTION] + max(p[ANSWER], p[STATEMENT])


class SyntheticCorpus(BaseModel):
    """Generated splits with their realized act marginals."""

    splits: CorpusSplits
    marginals: dict[str, float]
    ceiling: float


class SyntheticSource:
    """Seeded generator; the same spec always yields the same corpus."""

    def __init__(self, spec: SyntheticSpec):
        """Initialize synthetic source."""
        self.spec = spec
        self.content_words = [f"w{i}" for i in range(spec.vocab_size)]
        weights = 1.0 / np.arange(1, spec.vocab_size + 1)
        self.content_probs = weights / weights.sum()
        self.greeting_words = list(_GREETING_WORDS[: spec.greeting_vocab_size]) + [
            f"greet{i}" for i in range(max(0, spec.greeting_vocab_size - len(_GREETING_WORDS)))
        ]

    def _acts(self, rng: np.random.Generator, length: int) -> list[str]:
        acts = [GREETING]
        for _ in range(1, length):
            if acts[-1] in (GREETING, QUESTION):
                acts.append(ANSWER)
            elif len(acts) == length - 1:
                acts.append(STATEMENT)
            elif rng.random() < self.spec.question_rate:
                acts.append(QUESTION)
            else:
                acts.append(STATEMENT)
        return acts

    def _text(self, rng: np.random.Generator, act: str) -> str:
        if act == GREETING:
            n = int(rng.integers(1, 4))
            words = [self.greeting_words[int(i)] for i in rng.integers(0, len(self.greeting_words), n)]
            return " ".join(words)
        n = int(rng.integers(self.spec.min_words, self.spec.max_words + 1))
        words = [self.content_words[int(i)] for i in rng.choice(len(self.content_words), n, p=self.content_probs)]
        if act == QUESTION:
            words.append(QUESTION_MARK)
        return " ".join(words)

    def _dialogue(self, rng: np.random.Generator, dialogue_id: str) -> Dialogue:
        length = int(rng.integers(self.spec.min_length, self.spec.max_length + 1))
        utterances = [
            Utterance(speaker="AB"[t % 2], text=self._text(rng, act), act=act)
            for t, act in enumerate(self._acts(rng, length))
        ]
        return Dialogue(id=dialogue_id, utterances=tuple(utterances))

    def generate(self) -> SyntheticCorpus:
        rng = np.random.default_rng(self.spec.seed)
        counts = {
            "train": self.spec.train_dialogues,
            "valid": self.spec.valid_dialogues,
            "test": self.spec.test_dialogues,
        }
        splits = CorpusSplits(**{
            name: [self._dialogue(rng, f"{name}-{i:05d}") for i in range(count)]
            for name, count in counts.items()
        })

        tally = {act: 0 for act in SYNTHETIC_ACTS}
        for name in counts:
            for dialogue in splits.split(name):
                for act in dialogue.acts:
                    tally[act] += 1
        total = sum(tally.values())
        marginals = {act: n / total for act, n in tally.items()}
        # float rounding can leave the sum a few ulps away from 1
        marginals[STATEMENT] = 1.0 - math.fsum(v for k, v in marginals.items() if k != STATEMENT)
        ceiling = context_free_ceiling(marginals)

        logger.info(
            f"Generated {sum(counts.values())} synthetic dialogues ({total} utterances); "
            f"context-free ceiling {ceiling:.4f}"
        )
        return SyntheticCorpus(splits=splits, marginals=marginals, ceiling=ceiling)


def gen_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    return SyntheticSource(spec).generate()
