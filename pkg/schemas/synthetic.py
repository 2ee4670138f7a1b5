"""Pydantic schema for the synthetic dialogue generator."""
from pydantic import BaseModel, ConfigDict, Field, model_validator

GREETING = "GREETING"
QUESTION = "QUESTION"
ANSWER = "ANSWER"
STATEMENT = "STATEMENT"
SYNTHETIC_ACTS = (GREETING, QUESTION, ANSWER, STATEMENT)


class SyntheticSpec(BaseModel):
    """Shape of a generated corpus whose labels need local context."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    train_dialogues: int = Field(300, ge=1)
    valid_dialogues: int = Field(60, ge=1)
    test_dialogues: int = Field(200, ge=1)
    min_length: int = Field(6, ge=2, description="Fewest utterances per dialogue")
    max_length: int = Field(14, ge=2, description="Most utterances per dialogue")
    vocab_size: int = Field(40, ge=2, description="Content words shared by ANSWER and STATEMENT")
    greeting_vocab_size: int = Field(6, ge=1, description="Words only greetings use")
    min_words: int = Field(3, ge=1)
    max_words: int = Field(8, ge=1)
    question_rate: float = Field(
        0.47, gt=0, lt=1, description="Chance a free position becomes a QUESTION"
    )
    seed: int = Field(7, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "SyntheticSpec":
        if self.min_length > self.max_length:
            raise ValueError(f"min_length {self.min_length} > max_length {self.max_length}")
        if self.min_words > self.max_words:
            raise ValueError(f"min_words {self.min_words} > max_words {self.max_words}")
        return self
