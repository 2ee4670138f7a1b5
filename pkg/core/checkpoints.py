"""Versioned binary checkpoint files.

Layout (all integers little-endian):

    magic        8 bytes  b"DACTCKPT"
    version      uint32
    header_len   uint32
    header       header_len bytes of UTF-8 ``key=<json value>`` lines
    count        uint32   number of parameter records
    records      name_len uint16, name, ndim uint8, ndim x uint32 dims,
                 prod(dims) float64 values in row-major order
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Mapping, Union

import numpy as np

from core.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DACTCKPT"
FORMAT_VERSION = 1


@dataclass
class CheckpointContents:
    header: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


class CheckpointManager:
    """Read and write one checkpoint file."""

    def __init__(self, path: Union[str, Path]):
        """Initialize checkpoint manager."""
        self.path = Path(path)

    def save(self, arrays: Mapping[str, np.ndarray], header: Mapping[str, Any]) -> Path:
        """Write header values and named arrays; returns the path written."""
        header_text = "".join(
            f"{key}={json.dumps(value, sort_keys=True)}\n" for key, value in header.items()
        ).encode("utf-8")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", FORMAT_VERSION, len(header_text)))
            f.write(header_text)
            f.write(struct.pack("<I", len(arrays)))
            for name, array in arrays.items():
                self._write_record(f, name, np.asarray(array, dtype="<f8"))
        logger.info(f"Saved checkpoint {self.path} ({len(arrays)} tensors)")
        return self.path

    @staticmethod
    def _write_record(f: BinaryIO, name: str, array: np.ndarray) -> None:
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<B", array.ndim))
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
        f.write(np.ascontiguousarray(array).tobytes())

    def load(self) -> CheckpointContents:
        """Parse the whole file; any deviation from the layout is a CheckpointError."""
        if not self.path.exists():
            raise CheckpointError(f"checkpoint not found: {self.path}")
        blob = self.path.read_bytes()
        reader = _Reader(blob, self.path)

        magic = reader.take(len(MAGIC), "magic bytes")
        if magic != MAGIC:
            raise CheckpointError(f"{self.path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, header_len = reader.unpack("<II", "version and header length")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{self.path}: format version {version} is not supported (expected {FORMAT_VERSION})"
            )
        contents = CheckpointContents(header=self._parse_header(reader.take(header_len, "header")))

        (count,) = reader.unpack("<I", "record count")
        for index in range(count):
            (name_len,) = reader.unpack("<H", f"record {index} name length")
            name = reader.take(name_len, f"record {index} name").decode("utf-8")
            (ndim,) = reader.unpack("<B", f"record {name} rank")
            shape = reader.unpack(f"<{ndim}I", f"record {name} shape")
            size = int(np.prod(shape)) if ndim else 1
            data = reader.take(8 * size, f"record {name} values")
            contents.arrays[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
        if reader.remaining:
            raise CheckpointError(f"{self.path}: {reader.remaining} unexpected trailing bytes")
        return contents

    def _parse_header(self, raw: bytes) -> dict[str, Any]:
        header: dict[str, Any] = {}
        for line_number, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"{self.path}: header line {line_number} has no '='")
            try:
                header[key] = json.loads(value)
            except json.JSONDecodeError as e:
                raise CheckpointError(f"{self.path}: header line {line_number}: {e.msg}") from e
        return header


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.offset = 0
        self.path = path

    @property
    def remaining(self) -> int:
        return len(self.blob) - self.offset

    def take(self, n: int, what: str) -> bytes:
        if n > self.remaining:
            raise CheckpointError(
                f"{self.path}: truncated file while reading {what} "
                f"(needed {n} bytes at offset {self.offset}, {self.remaining} left)"
            )
        chunk = self.blob[self.offset: self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))
