"""Premise-image region features and token embeddings.

A feature store is a directory with a ``manifest.jsonl`` mapping image_id to
a relative path; each path holds one K x D float32 matrix in a fixed binary
layout (16-byte header: magic ``RFM1``, K, D, reserved word, all
little-endian, then K*D little-endian float32 values). Region extraction
itself is out of scope; ``synth_features`` provides desk-scale substitutes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, NotFoundError

MAGIC = b"RFM1"
_HEADER = struct.Struct("<4sIII")

DEFAULT_NUM_REGIONS = 36
DEFAULT_REGION_DIM = 2048


@dataclass(eq=False)
class RegionFeatureMatrix:
    """K region vectors of dimension D for one image."""

    image_id: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or min(self.features.shape) < 1:
            raise ValueError("features must be a K x D matrix with K, D >= 1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"features for {self.image_id!r} contain non-finite entries")

    @property
    def num_regions(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _write_matrix(path: Path, features: np.ndarray) -> None:
    k, d = features.shape
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, k, d, 0))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def _read_matrix(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, k, d, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 4 * k * d:
        raise FormatError(f"{path}: payload size does not match header {k}x{d}")
    return np.frombuffer(body, dtype="<f4").reshape(k, d).copy()


class FeatureStore:
    """Read/write access to a directory of region feature matrices."""

    MANIFEST = "manifest.jsonl"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._paths: dict[str, str] = {}
        manifest = self.root / self.MANIFEST
        if manifest.exists():
            with manifest.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._paths[entry["image_id"]] = entry["path"]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._paths

    def image_ids(self) -> list[str]:
        return list(self._paths)

    def add(self, matrix: RegionFeatureMatrix) -> None:
        rel = f"feat_{len(self._paths):06d}.rfm"
        _write_matrix(self.root / rel, matrix.features)
        with (self.root / self.MANIFEST).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"image_id": matrix.image_id, "path": rel}))
            fh.write("\n")
        self._paths[matrix.image_id] = rel

    def get(self, image_id: str) -> RegionFeatureMatrix:
        rel = self._paths.get(image_id)
        if rel is None:
            raise NotFoundError(f"image_id {image_id!r} not in feature store")
        return RegionFeatureMatrix(image_id, _read_matrix(self.root / rel))


def load_region_features(store: str | Path, image_id: str) -> RegionFeatureMatrix:
    return FeatureStore(store).get(image_id)


def write_feature_store(
    store: str | Path, matrices: Iterable[RegionFeatureMatrix]
) -> FeatureStore:
    fs = FeatureStore(store)
    for matrix in matrices:
        fs.add(matrix)
    return fs


def synth_features(
    seed: int,
    num_regions: int = DEFAULT_NUM_REGIONS,
    dim: int = DEFAULT_REGION_DIM,
    image_id: str | None = None,
) -> RegionFeatureMatrix:
    """Deterministic standard-normal stand-in for detector features."""
    if num_regions < 1 or dim < 1:
        raise ValueError("num_regions and dim must be >= 1")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((num_regions, dim), dtype=np.float32)
    return RegionFeatureMatrix(image_id or f"synth-{seed}", features)


class EmbeddingTable:
    """Token -> vector map with a dedicated unknown-token vector."""

    def __init__(self, vectors: Mapping[str, np.ndarray], unknown: np.ndarray):
        self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
        self.unknown = np.asarray(unknown, dtype=np.float64)
        self.dim = self.unknown.shape[0]
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise FormatError(f"embedding for {token!r} has dimension {vec.shape}")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors.get(token, self.unknown)

    def tokens(self) -> list[str]:
        return list(self.vectors)


def embed_tokens(tokens: Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Length-preserving lookup; out-of-table tokens map to the unknown vector."""
    if not tokens:
        raise ValueError("token sequence must be non-empty")
    return np.stack([table.lookup(t) for t in tokens])


def load_embedding_table(path: str | Path) -> EmbeddingTable:
    """Parse the standard text format: token followed by E floats per line.

    The unknown-token vector is the mean of all loaded vectors.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}:{line_no}: {exc}") from exc
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise FormatError(
                    f"{path}:{line_no}: dimension {vec.shape[0]} != {dim}"
                )
            vectors[token] = vec
    if not vectors:
        raise FormatError(f"{path}: no embeddings found")
    unknown = np.mean(np.stack(list(vectors.values())), axis=0)
    return EmbeddingTable(vectors, unknown)


def random_embedding_table(tokens: Iterable[str], dim: int, seed: int) -> EmbeddingTable:
    """Seeded random table so desk-scale runs need no pretrained vectors."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    vectors = {}
    for token in dict.fromkeys(tokens):
        vectors[token] = rng.standard_normal(dim)
    unknown = rng.standard_normal(dim)
    return EmbeddingTable(vectors, unknown)
