"""Pydantic schemas for dialogue corpora."""
from typing import Literal
from pydantic import BaseModel, ConfigDict, Field, field_validator

SPLITS = ("train", "valid", "test")
SplitName = Literal["train", "valid", "test"]


class Utterance(BaseModel):
    """One speaker turn with its dialogue act."""

    model_config = ConfigDict(frozen=True)

    speaker: str = Field(..., description="Speaker tag")
    text: str = Field(..., description="Utterance text, lowercased on load")
    act: str = Field(..., min_length=1, description="Dialogue act label")

    @field_validator("text")
    @classmethod
    def lowercase(cls, value: str) -> str:
        return value.lower()


class Dialogue(BaseModel):
    """Ordered utterances sharing one id."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(..., description="Dialogue identifier")
    utterances: tuple[Utterance, ...] = Field(..., min_length=1)

    @property
    def acts(self) -> list[str]:
        return [u.act for u in self.utterances]

    def __len__(self) -> int:
        return len(self.utterances)


class CorpusRecord(Dialogue):
    """One line of a corpus file."""

    split: str = Field(..., description="train, valid or test")


class CorpusSplits(BaseModel):
    """Train / validation / test dialogue lists."""

    train: list[Dialogue] = Field(default_factory=list)
    valid: list[Dialogue] = Field(default_factory=list)
    test: list[Dialogue] = Field(default_factory=list)

    def split(self, name: str) -> list[Dialogue]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def label_set(self) -> set[str]:
        return {act for name in SPLITS for d in self.split(name) for act in d.acts}


class SplitStats(BaseModel):
    """Dialogue and utterance counts of one split."""

    dialogues: int
    utterances: int

    def __str__(self) -> str:
        return f"{self.dialogues} ({self.utterances})"


class CorpusStats(BaseModel):
    """Per-split counts, label count and mean dialogue length."""

    splits: dict[str, SplitStats]
    num_labels: int
    mean_dialogue_length: float

    def rows(self) -> list[list]:
        return [[name, str(stats)] for name, stats in self.splits.items()]
