"""Checkpoint file format and atomic file writes.

A checkpoint is one JSON header line (config, tensor names, shapes, dtype,
byte offsets) followed by raw little-endian float32 tensor data, row-major.
The same format holds the encoder, the label-embedding table, and combined
model checkpoints.  All artifact writes go through a temp-file + rename so a
crashed run never leaves a truncated file behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class CheckpointError(ValueError):
    """Raised for unreadable or inconsistent checkpoint files."""


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path: str | Path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _as_float32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def serialize_tensors(tensors: dict[str, np.ndarray], config: dict | None = None) -> bytes:
    """Header line + concatenated raw data; tensor order is sorted by name."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        blob = _as_float32_bytes(tensors[name])
        entries.append(
            {
                "name": name,
                "shape": list(tensors[name].shape),
                "dtype": "float32",
                "offset": offset,
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config or {}, "tensors": entries}, sort_keys=True)
    return header.encode("utf-8") + b"\n" + b"".join(blobs)


def deserialize_tensors(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    newline = data.find(b"\n")
    if newline < 0:
        raise CheckpointError("missing checkpoint header line")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    body = data[newline + 1 :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        if entry["dtype"] != "float32":
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r} for {entry['name']!r}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(body):
            raise CheckpointError(f"checkpoint truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(body[start:end], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return header["config"], tensors


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    atomic_write_bytes(path, serialize_tensors(tensors, config))


def load_tensors(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return deserialize_tensors(Path(path).read_bytes())


def tensors_sha256(tensors: dict[str, np.ndarray], config: dict | None = None) -> str:
    return hashlib.sha256(serialize_tensors(tensors, config)).hexdigest()
