"""Token embedding table, mean pooling, similarity functions and persistence."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    IdOutOfRange,
    InvalidShape,
    MalformedFile,
    NonFinite,
)
from .vocab import Vocabulary, encode

ZERO_NORM = 1e-12


class SimilarityMetric(str, enum.Enum):
    COSINE = "cosine"
    DOT = "dot"

    def __str__(self) -> str:
        return self.value


@dataclass
class EmbeddingTable:
    """A ``V x D`` float64 matrix; row ``k`` is the vector of token id ``k``."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise InvalidShape(f"table must be a non-empty 2-d matrix, got shape {w.shape}")
        self.weights = w
        self.check_finite()

    @property
    def vocab_size(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def row(self, k: int) -> np.ndarray:
        return self.weights[k]

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.weights)):
            raise NonFinite("embedding table contains NaN or Inf")

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.weights.copy())

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.weights * factor)


def init_table(vocab_size: int, dim: int, seed: int) -> EmbeddingTable:
    """Seeded uniform init on ``[-0.5/dim, 0.5/dim]``."""
    if vocab_size < 1 or dim < 1:
        raise InvalidShape(f"vocab_size and dim must be >= 1, got ({vocab_size}, {dim})")
    rng = np.random.default_rng(seed)
    half = 0.5 / dim
    return EmbeddingTable(rng.uniform(-half, half, size=(vocab_size, dim)))


def mean_pool(table: EmbeddingTable, ids: Sequence[int]) -> np.ndarray:
    """Arithmetic mean of the rows selected by ``ids``.

    Ids are summed in sorted order, so the result is bitwise independent of
    token order.
    """
    if len(ids) == 0:
        raise EmptyInput("cannot pool an empty token sequence")
    idx = np.sort(np.asarray(ids, dtype=np.int64))
    if idx[0] < 0 or idx[-1] >= table.vocab_size:
        raise IdOutOfRange(f"token ids must lie in [0, {table.vocab_size})")
    if len(idx) == 1:
        return table.weights[idx[0]].copy()
    return table.weights[idx].sum(axis=0) / len(idx)


def _check_dims(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise DimensionMismatch(f"dimension mismatch: {u.shape} vs {v.shape}")


def dot(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dims(u, v)
    return float(np.dot(u, v))


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity; 0.0 when either vector has norm below 1e-12."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dims(u, v)
    nu = math.sqrt(float(np.dot(u, u)))
    nv = math.sqrt(float(np.dot(v, v)))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 0.0
    return float(np.dot(u, v)) / (nu * nv)


def similarity(metric: SimilarityMetric | str, u: Sequence[float], v: Sequence[float]) -> float:
    metric = SimilarityMetric(metric)
    if metric is SimilarityMetric.COSINE:
        return cosine(u, v)
    return dot(u, v)


def embed_text(table: EmbeddingTable, vocab: Vocabulary, text: str) -> np.ndarray:
    ids = encode(vocab, text)
    if not ids:
        raise EmptyInput(f"text has no tokens: {text!r}")
    return mean_pool(table, ids)


class TextEncoder:
    """Callable ``text -> embedding`` bound to a table and vocabulary.

    Embeddings are memoised per text; the table must not be mutated while an
    encoder over it is in use.
    """

    def __init__(self, table: EmbeddingTable, vocab: Vocabulary) -> None:
        if len(vocab) > table.vocab_size:
            raise InvalidShape(
                f"vocabulary has {len(vocab)} tokens but table only {table.vocab_size} rows"
            )
        self.table = table
        self.vocab = vocab
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = embed_text(self.table, self.vocab, text)
            self._cache[text] = vec
        return vec


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    """Write the table as text; ``repr`` gives shortest round-trip decimals."""
    table.check_finite()
    lines = [f"{table.vocab_size} {table.dim}\n"]
    lines.extend(" ".join(repr(float(x)) for x in row) + "\n" for row in table.weights)
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_table(path: str | Path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedFile(f"{path}: empty table file")
    header = lines[0].split(" ")
    try:
        n_rows, n_cols = (int(x) for x in header)
    except ValueError:
        raise MalformedFile(f"{path}:1: header must be 'V D', got {lines[0]!r}") from None
    if n_rows < 1 or n_cols < 1:
        raise MalformedFile(f"{path}:1: non-positive shape {n_rows}x{n_cols}")
    body = lines[1:]
    if len(body) != n_rows:
        raise MalformedFile(f"{path}: header declares {n_rows} rows, found {len(body)}")
    weights = np.empty((n_rows, n_cols), dtype=np.float64)
    for k, line in enumerate(body):
        fields = line.split(" ")
        if len(fields) != n_cols:
            raise MalformedFile(f"{path}:{k + 2}: expected {n_cols} values, found {len(fields)}")
        try:
            weights[k] = [float(x) for x in fields]
        except ValueError:
            raise MalformedFile(f"{path}:{k + 2}: non-numeric field") from None
    try:
        return EmbeddingTable(weights)
    except NonFinite:
        raise MalformedFile(f"{path}: non-finite value in table") from None
