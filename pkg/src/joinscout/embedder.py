"""Cell embedding functions.

Every cell string is mapped to a unit-norm float64 vector of a fixed
dimension. Two embedder kinds are provided:

* ``hashed-ngram`` (the self-contained default): boundary-marked character
  n-grams are hashed into ``dim`` buckets with a data-independent sign, the
  signed counts are then L2-normalized. Fully deterministic for a fixed
  (dimension, ngram_range, seed).
* ``word-vector-file``: whitespace tokens are looked up in a plain-text
  word-vector table; known token vectors are averaged and renormalized.
  Cells whose tokens are all unknown fall back to the hashed kind at the
  table's dimension.

Embedders are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HASHED_KIND = "hashed-ngram"
WORD_VECTOR_KIND = "word-vector-file"

DEFAULT_DIMENSION = 64
DEFAULT_NGRAM_RANGE = (2, 3)


class EmbeddingError(ValueError):
    """Raised for unembeddable input such as an empty cell."""


@dataclass(frozen=True)
class EmbedderConfig:
    """Configuration selecting and parameterizing a cell embedder."""

    kind: str = HASHED_KIND
    dimension: int = DEFAULT_DIMENSION
    ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE
    vector_file_path: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (HASHED_KIND, WORD_VECTOR_KIND):
            raise ValueError(f"unknown embedder kind: {self.kind!r}")
        if self.dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {self.dimension}")
        lo, hi = self.ngram_range
        if lo < 1 or lo > hi:
            raise ValueError(f"invalid ngram_range: {self.ngram_range}")
        if self.kind == WORD_VECTOR_KIND and not self.vector_file_path:
            raise ValueError("word-vector-file kind requires vector_file_path")


def _fallback_basis(dim: int) -> np.ndarray:
    # Degenerate zero vectors map to the first basis vector instead of failing.
    vec = np.zeros(dim, dtype=np.float64)
    vec[0] = 1.0
    return vec


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return _fallback_basis(vec.shape[0])
    return vec / norm


class HashedNgramEmbedder:
    """Signed feature hashing of boundary-marked character n-grams."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION,
                 ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
                 seed: int = 0) -> None:
        if dimension < 2:
            raise ValueError(f"dimension must be >= 2, got {dimension}")
        lo, hi = ngram_range
        if lo < 1 or lo > hi:
            raise ValueError(f"invalid ngram_range: {ngram_range}")
        self.dimension = dimension
        self.ngram_range = (int(lo), int(hi))
        self.seed = seed
        self._key = int(seed).to_bytes(8, "little", signed=True)

    def _hash(self, gram: str) -> tuple[int, float]:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=9,
                                 key=self._key).digest()
        bucket = int.from_bytes(digest[:8], "little") % self.dimension
        sign = 1.0 if digest[8] & 1 else -1.0
        return bucket, sign

    def embed_cell(self, text: str) -> np.ndarray:
        text = text.strip()
        if not text:
            raise EmbeddingError("empty cell")
        marked = f"<{text}>"
        lo, hi = self.ngram_range
        vec = np.zeros(self.dimension, dtype=np.float64)
        for size in range(lo, hi + 1):
            for start in range(len(marked) - size + 1):
                bucket, sign = self._hash(marked[start:start + size])
                vec[bucket] += sign
        return _normalize(vec)

    def embed_column(self, cells: list[str]) -> np.ndarray:
        return embed_rows(self, cells)


class WordVectorEmbedder:
    """Averages known token vectors; hashes cells with no known token."""

    def __init__(self, table: dict[str, np.ndarray], dimension: int,
                 ngram_range: tuple[int, int] = DEFAULT_NGRAM_RANGE,
                 seed: int = 0) -> None:
        self.table = table
        self.dimension = dimension
        self._fallback = HashedNgramEmbedder(dimension, ngram_range, seed)

    def embed_cell(self, text: str) -> np.ndarray:
        stripped = text.strip()
        if not stripped:
            raise EmbeddingError("empty cell")
        hits = [self.table[tok] for tok in stripped.split() if tok in self.table]
        if not hits:
            return self._fallback.embed_cell(stripped)
        return _normalize(np.mean(hits, axis=0))

    def embed_column(self, cells: list[str]) -> np.ndarray:
        return embed_rows(self, cells)


def load_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a plain-text word-vector file into a token -> vector table.

    Each line is ``token v1 v2 ... vd``; an optional first line of two
    integers (``count dim``) is skipped. All lines must share one dimension.
    """
    table: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue  # header line
                except ValueError:
                    pass
            token, values = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric vector entry") from exc
            if vec.size == 0:
                raise ValueError(f"line {lineno}: token without vector")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(
                    f"line {lineno}: dimension {vec.size} != expected {dim}")
            table[token] = vec
    if not table:
        raise ValueError(f"no vectors found in {path}")
    return table


def make_embedder(cfg: EmbedderConfig) -> HashedNgramEmbedder | WordVectorEmbedder:
    """Build the embedder described by ``cfg``."""
    if cfg.kind == HASHED_KIND:
        return HashedNgramEmbedder(cfg.dimension, cfg.ngram_range, cfg.seed)
    table = load_word_vectors(cfg.vector_file_path)
    dim = next(iter(table.values())).shape[0]
    return WordVectorEmbedder(table, dim, cfg.ngram_range, cfg.seed)


def embed_rows(embedder, cells: list[str]) -> np.ndarray:
    """Stack per-cell embeddings into an (n, d) column matrix.

    Row i depends only on cell i; errors carry the offending cell index.
    """
    if len(cells) == 0:
        raise EmbeddingError("column has no cells")
    rows = np.empty((len(cells), embedder.dimension), dtype=np.float64)
    for i, cell in enumerate(cells):
        try:
            rows[i] = embedder.embed_cell(cell)
        except EmbeddingError as exc:
            raise EmbeddingError(f"cell {i}: {exc}") from exc
    return rows


def embed_cell(text: str, cfg: EmbedderConfig) -> np.ndarray:
    return make_embedder(cfg).embed_cell(text)


def embed_column(cells: list[str], cfg: EmbedderConfig) -> np.ndarray:
    return make_embedder(cfg).embed_column(cells)
