"""Deterministic checkpoint container.

Layout (version 1, all integers little-endian):

    bytes 0..3    magic ``VTCK``
    bytes 4..7    format version (uint32)
    bytes 8..15   header length in bytes (uint64)
    header        UTF-8 JSON: {"kind", "config", "arrays": [{"name",
                  "dtype", "shape", "offset", "nbytes"}, ...]}
    payload       raw array bytes, concatenated in header order

Arrays are written in sorted-name order and carry no timestamps, so two runs
that produce identical tensors produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"VTCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(
    path: str | Path, kind: str, config: dict, arrays: Mapping[str, np.ndarray]
) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"kind": kind, "config": config, "arrays": entries}, sort_keys=True
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def save_model(path: str | Path, model, kind: str, config: dict) -> None:
    """Persist a torch module's parameters plus its rebuild config."""
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_checkpoint(path, kind, config, arrays)


def load_model(path: str | Path):
    """Rebuild a model from a checkpoint; returns (kind, model)."""
    import torch

    from .explainer import ExplainableVteModel, ExplanationClassifier
    from .model import VteClassifier

    kinds = {
        VteClassifier.CHECKPOINT_KIND: VteClassifier.from_config,
        ExplainableVteModel.CHECKPOINT_KIND: ExplainableVteModel.from_config,
        ExplanationClassifier.CHECKPOINT_KIND: ExplanationClassifier.from_config,
    }
    kind, config, arrays = load_checkpoint(path)
    if kind not in kinds:
        raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
    model = kinds[kind](config)
    model.load_state_dict({k: torch.tensor(v) for k, v in arrays.items()})
    return kind, model


def load_state_tensors(path: str | Path) -> dict:
    import torch

    _, _, arrays = load_checkpoint(path)
    return {k: torch.tensor(v) for k, v in arrays.items()}


def load_checkpoint(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    header_end = _PREFIX.size + header_len
    header = json.loads(raw[_PREFIX.size : header_end].decode("utf-8"))
    arrays = {}
    for entry in header["arrays"]:
        start = header_end + entry["offset"]
        blob = raw[start : start + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise FormatError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=entry["dtype"]).reshape(
            entry["shape"]
        ).copy()
    return header["kind"], header["config"], arrays
