"""Attention-weight export as JSON matrices and grayscale pixel maps.

Images are binary PPM (P6). Each weight becomes a square block of
``cell_px`` pixels whose gray level is 255 * (1 - weight), so darker cells
carry more attention.
"""
import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from core.config import settings
from core.exceptions import ShapeError

logger = logging.getLogger(__name__)


def head_mean(weights: Sequence[np.ndarray]) -> np.ndarray:
    if not weights:
        raise ShapeError("no attention heads to average")
    return np.mean(np.stack(weights), axis=0)


def long_range_mass(matrix: np.ndarray, distance: float) -> float:
    """Mean over rows of the weight placed on columns more than ``distance`` away."""
    n = matrix.shape[0]
    offsets = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    return float((matrix * (offsets > distance)).sum(axis=1).mean())


def write_ppm(matrix: np.ndarray, path: Union[str, Path], cell_px: Optional[int] = None) -> Path:
    cell_px = cell_px or settings.heatmap_cell_px
    if matrix.ndim != 2:
        raise ShapeError(f"heatmap needs a matrix, got shape {matrix.shape}")
    gray = np.rint(255.0 * (1.0 - np.clip(matrix, 0.0, 1.0))).astype(np.uint8)
    pixels = np.kron(gray, np.ones((cell_px, cell_px), dtype=np.uint8))
    rgb = np.repeat(pixels[:, :, None], 3, axis=2)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
    return path


def export_attention(
    weights: Sequence[np.ndarray],
    prefix: Union[str, Path],
    labels: Optional[Sequence[str]] = None,
    cell_px: Optional[int] = None,
) -> list[Path]:
    """Write ``<prefix>.json`` plus one image per head and one for the head mean."""
    if not weights:
        raise ShapeError("no attention heads to export")
    n = weights[0].shape[0]
    for w in weights:
        if w.shape != (n, n):
            raise ShapeError(f"attention matrices must all be {n}x{n}, got {w.shape}")
    mean = head_mean(weights)
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)

    document = {
        "n": n,
        "labels": list(labels) if labels is not None else None,
        "heads": [{"head": h, "weights": w.tolist()} for h, w in enumerate(weights)],
        "mean": mean.tolist(),
    }
    json_path = prefix.with_name(prefix.name + ".json")
    json_path.write_text(json.dumps(document, indent=2), encoding="utf-8")

    written = [json_path]
    for h, w in enumerate(weights):
        written.append(write_ppm(w, prefix.with_name(f"{prefix.name}_head{h}.ppm"), cell_px))
    written.append(write_ppm(mean, prefix.with_name(f"{prefix.name}_mean.ppm"), cell_px))
    logger.info(f"Exported {len(weights)} attention heads ({n}x{n}) to {json_path.parent}")
    return written
