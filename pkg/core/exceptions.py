"""Exception hierarchy shared by every package."""
from typing import Optional


class DialogueActError(ValueError):
    """Base class for rejected inputs and invalid states."""


class ShapeError(DialogueActError):
    """Tensor dimensions do not agree."""


class NonFiniteError(DialogueActError):
    """A stored value became NaN or infinite."""


class TapeError(DialogueActError):
    """Backward pass requested on something the tape cannot differentiate."""


class NonDeterministicError(DialogueActError):
    """Two evaluations of the same function disagreed."""


class VocabularyError(DialogueActError):
    """Token id outside the embedding table."""


class ConfigurationError(DialogueActError):
    """Hyperparameters are inconsistent or unknown."""


class SegmentationError(DialogueActError):
    """Window or mask arguments are unusable."""


class CorpusFormatError(DialogueActError):
    """A corpus file could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class CheckpointError(DialogueActError):
    """A checkpoint file is corrupt, truncated or incompatible."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training."""
