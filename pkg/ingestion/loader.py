"""JSON-lines corpus reader and writer."""
import json
import logging
from pathlib import Path
from typing import Union

from pydantic import ValidationError
from tabulate import tabulate

from core.exceptions import CorpusFormatError
from schemas.corpus import SPLITS, CorpusRecord, CorpusSplits, CorpusStats, Dialogue, SplitStats

logger = logging.getLogger(__name__)


class CorpusLoader:
    """Corpus file with one dialogue record per line."""

    def __init__(self, file_path: Union[str, Path]):
        """Initialize corpus loader."""
        self.file_path = Path(file_path)

    def load(self) -> CorpusSplits:
        """Read and validate every line; the first bad line aborts the load."""
        if not self.file_path.exists():
            raise CorpusFormatError(f"corpus file not found: {self.file_path}")

        splits = CorpusSplits()
        seen = 0
        with open(self.file_path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                record = self._parse_line(line, line_number)
                splits.split(record.split).append(Dialogue(id=record.id, utterances=record.utterances))
                seen += 1

        if seen == 0:
            raise CorpusFormatError(f"corpus file is empty: {self.file_path}")

        stats = corpus_stats(splits)
        logger.info(
            f"Loaded corpus {self.file_path}: "
            + ", ".join(f"{name} {stats.splits[name]}" for name in SPLITS)
        )
        return splits

    @staticmethod
    def _parse_line(line: str, line_number: int) -> CorpusRecord:
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"invalid JSON: {e.msg}", line_number) from e
        if not isinstance(raw, dict):
            raise CorpusFormatError("record must be a JSON object", line_number)
        split = raw.get("split")
        if split not in SPLITS:
            raise CorpusFormatError(f"unknown split tag {split!r}; expected one of {SPLITS}", line_number)
        try:
            return CorpusRecord.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(part) for part in first["loc"])
            raise CorpusFormatError(f"{where}: {first['msg']}", line_number) from e

    def write(self, splits: CorpusSplits) -> int:
        """Write splits in train/valid/test order; returns dialogues written."""
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        written = 0
        with open(self.file_path, "w", encoding="utf-8", newline="\n") as f:
            for name in SPLITS:
                for dialogue in splits.split(name):
                    record = CorpusRecord(id=dialogue.id, utterances=dialogue.utterances, split=name)
                    f.write(record.model_dump_json(include={"id", "split", "utterances"}) + "\n")
                    written += 1
        logger.info(f"Wrote {written} dialogues to {self.file_path}")
        return written


def load_corpus(path: Union[str, Path]) -> CorpusSplits:
    return CorpusLoader(path).load()


def write_corpus(splits: CorpusSplits, path: Union[str, Path]) -> int:
    return CorpusLoader(path).write(splits)


def corpus_stats(splits: CorpusSplits) -> CorpusStats:
    """Dialogue (utterance) counts per split, label count and mean length."""
    per_split = {
        name: SplitStats(
            dialogues=len(splits.split(name)),
            utterances=sum(len(d) for d in splits.split(name)),
        )
        for name in SPLITS
    }
    dialogues = sum(s.dialogues for s in per_split.values())
    utterances = sum(s.utterances for s in per_split.values())
    return CorpusStats(
        splits=per_split,
        num_labels=len(splits.label_set()),
        mean_dialogue_length=utterances / dialogues if dialogues else 0.0,
    )


def format_stats(stats: CorpusStats) -> str:
    """Table of dialogues (utterances) per split."""
    rows = stats.rows() + [["|C|", stats.num_labels], ["|U|", f"{stats.mean_dialogue_length:.1f}"]]
    return tabulate(rows, headers=["split", "dialogues (utterances)"], tablefmt="grid")
