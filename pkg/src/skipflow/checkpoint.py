"""Versioned parameter container.

Layout::

    SKIPFLOW-CKPT 1\\n
    <header byte length, decimal>\\n
    <header: UTF-8 JSON, sorted keys>\\n
    <payload: every block's values as little-endian float64, in header order>

The header holds ``config`` (a :class:`ModelConfig` dict), free-form
``metadata`` and ``blocks``: a list of ``{"name", "shape", "offset"}`` where
``offset`` counts bytes from the start of the payload. Writing is
deterministic, so equal parameters give equal files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataValidationError
from .model import ModelConfig, SkipFlowModel

MAGIC = b"SKIPFLOW-CKPT"
VERSION = 1


def dumps(blocks: dict[str, np.ndarray], config: dict, metadata: dict | None = None) -> bytes:
    entries = []
    offset = 0
    payload = []
    for name, values in blocks.items():
        arr = np.asarray(values, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": config, "metadata": metadata or {}, "blocks": entries}, sort_keys=True).encode("utf-8")
    return b"%s %d\n%d\n" % (MAGIC, VERSION, len(header)) + header + b"\n" + b"".join(payload)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Return ``(blocks, config, metadata)``."""
    try:
        first, rest = data.split(b"\n", 1)
        magic, version = first.split(b" ")
        size_line, rest = rest.split(b"\n", 1)
        size = int(size_line)
    except ValueError:
        raise DataValidationError("not a checkpoint file (bad preamble)") from None
    if magic != MAGIC:
        raise DataValidationError("not a checkpoint file (bad magic)")
    if int(version) != VERSION:
        raise DataValidationError(f"unsupported checkpoint version {int(version)}")
    header = json.loads(rest[:size].decode("utf-8"))
    payload = rest[size + 1 :]
    blocks = {}
    for entry in header["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise DataValidationError(f"checkpoint truncated inside block {entry['name']}")
        blocks[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).astype(np.float64)
    return blocks, header["config"], header["metadata"]


def save(path, model: SkipFlowModel, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model.state_dict(), model.config.to_dict(), metadata))


def load(path) -> tuple[SkipFlowModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blocks, config, metadata = loads(path.read_bytes())
    model = SkipFlowModel(ModelConfig(**config))
    model.load_state_dict(blocks)
    return model, metadata
