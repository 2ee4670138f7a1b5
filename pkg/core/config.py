"""Configuration management using Pydantic settings."""
from typing import Literal, Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables.

    Run hyperparameters are not here; they live in
    ``schemas.training.TrainConfig`` so a run can be archived as one file.
    """

    model_config = SettingsConfigDict(
        env_prefix="DA_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = Field("INFO", description="Root log level")
    log_format: Literal["text", "json"] = Field(
        "text", description="Plain text lines or one JSON object per record"
    )

    # Artifacts
    output_dir: str = Field("runs", description="Default directory for run artifacts")
    corpus_path: Optional[str] = Field(
        None, description="Corpus used when a command is given no --corpus"
    )
    checkpoint_name: str = Field("model.ckpt", description="Checkpoint file name")
    metrics_name: str = Field("metrics.json", description="Metrics file name")

    # Visualization
    heatmap_cell_px: int = Field(16, ge=1, description="Pixel size of one heatmap cell")


# Global settings instance
settings = Settings()
