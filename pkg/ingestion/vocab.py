"""Word-level tokenizer and frequency-ranked vocabulary."""
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from core.exceptions import CorpusFormatError
from schemas.corpus import Dialogue

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token <-> id map with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"vocabulary must start with {PAD_TOKEN!r}, {UNK_TOKEN!r}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.id_to_token = tokens
        self.token_to_id = {token: i for i, token in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.id_of(token) for token in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(train_dialogues: Sequence[Dialogue], max_size: int) -> Vocab:
    """Fill slots after PAD/UNK by frequency, ties broken lexicographically.

    Only pass the training split; other splits must map unseen words to UNK.
    """
    if max_size < 3:
        raise ValueError(f"max_size must be at least 3, got {max_size}")
    counts = Counter(
        token for dialogue in train_dialogues for u in dialogue.utterances for token in tokenize(u.text)
    )
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    kept = [token for token, _ in ranked[: max_size - 2]]
    logger.info(f"Built vocabulary: {len(kept) + 2} entries from {len(counts)} distinct tokens")
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept)


def load_embeddings(path: str, vocab: Vocab, table: np.ndarray) -> int:
    """Overwrite rows of ``table`` for tokens listed in a text embedding file.

    Each line is a token followed by ``table.shape[1]`` reals. Returns the
    number of vocabulary rows replaced.
    """
    dim = table.shape[1]
    replaced = 0
    with open(Path(path), "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusFormatError(
                    f"embedding for {token!r} has {len(values)} values, expected {dim}", line_number
                )
            if token not in vocab:
                continue
            try:
                table[vocab.id_of(token)] = [float(v) for v in values]
            except ValueError as e:
                raise CorpusFormatError(f"bad number in embedding for {token!r}: {e}", line_number) from e
            replaced += 1
    logger.info(f"Loaded {replaced} pretrained embeddings from {path}")
    return replaced
