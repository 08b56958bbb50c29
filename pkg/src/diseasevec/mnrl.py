"""Multiple Negatives Ranking Loss training over a mean-pooled embedding table.

For a batch of ``B`` anchor/positive pairs the similarity matrix holds
``S[i, j] = sim(E(anchor_i), E(positive_j))``; every off-diagonal positive is
an in-batch negative for anchor ``i``.  The loss is softmax cross-entropy
with the matched positive as target::

    L = 1/B * sum_i [ logsumexp_j(scale * S[i, j]) - scale * S[i, i] ]

Gradients are derived by hand through the similarity and the mean pooling,
and :func:`grad_check` compares them against central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import ZERO_NORM, EmbeddingTable, SimilarityMetric, mean_pool
from .errors import ConfigError, DatasetTooSmall, EmptyInput, NonFinite, NotSquare
from .records import PairRecord
from .vocab import Vocabulary, encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    batch_size: int = 8
    learning_rate: float = 0.05
    scale: float = 20.0
    seed: int = 0
    similarity: SimilarityMetric = SimilarityMetric.COSINE
    shuffle_each_epoch: bool = True
    # only used when the trainer has to initialise a fresh table
    dim: int = 32

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "similarity", SimilarityMetric(self.similarity))
        except ValueError:
            raise ConfigError(f"unknown similarity {self.similarity!r}") from None
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (MNRL needs an in-batch negative)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        for name in ("learning_rate", "scale"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be finite and positive, got {value}")


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_train_config(text: str, source: str = "<config>") -> TrainConfig:
    """Parse ``key = value`` lines.  ``#`` starts a comment; unknown keys fail."""
    converters = {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "scale": float,
        "seed": int,
        "similarity": str,
        "shuffle_each_epoch": _parse_bool,
        "dim": int,
    }
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in converters:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = converters[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return TrainConfig(**values)


def load_train_config(path: str | Path) -> TrainConfig:
    return parse_train_config(Path(path).read_text(encoding="utf-8"), str(path))


def format_train_config(config: TrainConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class LossStats:
    per_epoch_mean_loss: list[float] = field(default_factory=list)
    steps: int = 0
    first_batch_loss: float | None = None

    def log_lines(self) -> list[str]:
        return [f"epoch {k} mean_loss {v!r}" for k, v in enumerate(self.per_epoch_mean_loss, 1)]


@dataclass
class BatchGradient:
    """Loss of one batch and its gradient on the rows the batch touches."""

    loss: float
    rows: np.ndarray
    values: np.ndarray

    def to_dense(self, vocab_size: int) -> np.ndarray:
        dense = np.zeros((vocab_size, self.values.shape[1]))
        dense[self.rows] = self.values
        return dense


def _check_matrix(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSquare(f"similarity matrix must be square, got shape {S.shape}")
    if S.shape[0] < 2:
        raise NotSquare("MNRL needs B >= 2")
    if not np.all(np.isfinite(S)):
        raise NonFinite("similarity matrix has non-finite entries")
    return S


def _row_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (row-wise logsumexp, row-wise softmax) with max-shift."""
    shift = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - shift)
    total = z.sum(axis=1, keepdims=True)
    return (shift + np.log(total)).ravel(), z / total


def mnrl_loss(S: np.ndarray, scale: float) -> float:
    S = _check_matrix(S)
    logits = scale * S
    lse, _ = _row_softmax(logits)
    per_row = lse - np.diag(logits)
    return float(per_row.mean())


def mnrl_loss_grad(S: np.ndarray, scale: float) -> np.ndarray:
    """dL/dS = scale/B * (softmax(scale * S) - I), row-wise softmax."""
    S = _check_matrix(S)
    B = S.shape[0]
    _, probs = _row_softmax(scale * S)
    return (scale / B) * (probs - np.eye(B))


def _encode_batch(vocab: Vocabulary, batch: Sequence[PairRecord]) -> tuple[list, list]:
    anchors, positives = [], []
    for pair in batch:
        for text, sink in ((pair.anchor, anchors), (pair.positive, positives)):
            ids = encode(vocab, text)
            if not ids:
                raise EmptyInput(f"text has no tokens: {text!r}")
            sink.append(ids)
    return anchors, positives


class _Forward:
    """Pooled embeddings and similarity matrix for one encoded batch."""

    def __init__(self, weights: np.ndarray, anchor_ids, positive_ids, metric) -> None:
        table = EmbeddingTable.__new__(EmbeddingTable)
        table.weights = weights  # skip validation on the hot path
        self.metric = metric
        self.A = np.stack([mean_pool(table, ids) for ids in anchor_ids])
        self.P = np.stack([mean_pool(table, ids) for ids in positive_ids])
        if metric is SimilarityMetric.DOT:
            self.S = self.A @ self.P.T
            return
        self.na = np.sqrt(np.einsum("ij,ij->i", self.A, self.A))
        self.np_ = np.sqrt(np.einsum("ij,ij->i", self.P, self.P))
        self.live_a = self.na >= ZERO_NORM
        self.live_p = self.np_ >= ZERO_NORM
        denom = np.outer(np.where(self.live_a, self.na, 1.0), np.where(self.live_p, self.np_, 1.0))
        S = (self.A @ self.P.T) / denom
        S[~self.live_a, :] = 0.0
        S[:, ~self.live_p] = 0.0
        self.S = S

    def backward(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map dL/dS to (dL/dA, dL/dP)."""
        if self.metric is SimilarityMetric.DOT:
            return G @ self.P, G.T @ self.A
        na = np.where(self.live_a, self.na, 1.0)[:, None]
        npp = np.where(self.live_p, self.np_, 1.0)[:, None]
        a_hat = self.A / na
        p_hat = self.P / npp
        GS = G * self.S
        dA = (G @ p_hat - GS.sum(axis=1)[:, None] * a_hat) / na
        dP = (G.T @ a_hat - GS.sum(axis=0)[:, None] * p_hat) / npp
        dA[~self.live_a] = 0.0
        dP[~self.live_p] = 0.0
        return dA, dP


def sim_matrix(
    table: EmbeddingTable,
    vocab: Vocabulary,
    batch: Sequence[PairRecord],
    metric: SimilarityMetric | str = SimilarityMetric.COSINE,
) -> np.ndarray:
    """``S[i, j] = metric(E(anchor_i), E(positive_j))``."""
    anchors, positives = _encode_batch(vocab, batch)
    return _Forward(table.weights, anchors, positives, SimilarityMetric(metric)).S


def _pool_backward(id_lists, grads: np.ndarray, inverse: dict[int, int], out: np.ndarray) -> None:
    for ids, g in zip(id_lists, grads):
        n = len(ids)
        for t in sorted(ids):
            out[inverse[t]] += g / n


def _backprop_encoded(weights, anchors, positives, config: TrainConfig) -> BatchGradient:
    fwd = _Forward(weights, anchors, positives, config.similarity)
    loss = mnrl_loss(fwd.S, config.scale)
    G = mnrl_loss_grad(fwd.S, config.scale)
    dA, dP = fwd.backward(G)
    rows = np.array(sorted({t for ids in anchors + positives for t in ids}), dtype=np.int64)
    inverse = {int(t): k for k, t in enumerate(rows)}
    values = np.zeros((len(rows), weights.shape[1]))
    _pool_backward(anchors, dA, inverse, values)
    _pool_backward(positives, dP, inverse, values)
    return BatchGradient(loss=loss, rows=rows, values=values)


def backprop_batch(
    table: EmbeddingTable,
    vocab: Vocabulary,
    batch: Sequence[PairRecord],
    config: TrainConfig,
) -> BatchGradient:
    """Batch loss and its exact gradient w.r.t. every table row the batch uses.

    Rows that do not occur in the batch have zero gradient and are omitted.
    """
    anchors, positives = _encode_batch(vocab, batch)
    return _backprop_encoded(table.weights, anchors, positives, config)


def batch_loss(
    table: EmbeddingTable,
    vocab: Vocabulary,
    batch: Sequence[PairRecord],
    config: TrainConfig,
) -> float:
    return mnrl_loss(sim_matrix(table, vocab, batch, config.similarity), config.scale)


def train(
    pairs: Sequence[PairRecord],
    vocab: Vocabulary,
    table: EmbeddingTable,
    config: TrainConfig,
) -> tuple[EmbeddingTable, LossStats]:
    """Plain minibatch SGD on the MNRL objective.

    The input table is not modified.  Each epoch is optionally shuffled with a
    generator seeded once from ``config.seed``; a trailing batch shorter than
    ``batch_size`` is dropped.
    """
    if len(pairs) < config.batch_size:
        raise DatasetTooSmall(
            f"dataset has {len(pairs)} pairs, fewer than batch_size={config.batch_size}"
        )
    encoded = [_encode_batch(vocab, [p]) for p in pairs]
    weights = table.weights.copy()
    rng = np.random.default_rng(config.seed)
    stats = LossStats()
    n_batches = len(pairs) // config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs)) if config.shuffle_each_epoch else np.arange(len(pairs))
        losses = []
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            anchors = [encoded[i][0][0] for i in idx]
            positives = [encoded[i][1][0] for i in idx]
            grad = _backprop_encoded(weights, anchors, positives, config)
            weights[grad.rows] -= config.learning_rate * grad.values
            if not np.all(np.isfinite(weights[grad.rows])):
                raise NonFinite(f"non-finite weights after step {stats.steps + 1}")
            if stats.first_batch_loss is None:
                stats.first_batch_loss = grad.loss
            losses.append(grad.loss)
            stats.steps += 1
        mean_loss = float(np.mean(losses))
        stats.per_epoch_mean_loss.append(mean_loss)
        log.info("epoch %d mean_loss %.6f", epoch + 1, mean_loss)
    return EmbeddingTable(weights), stats


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple[int, int]
    tolerance: float
    n_entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numeric_gradient(
    table: EmbeddingTable,
    vocab: Vocabulary,
    batch: Sequence[PairRecord],
    config: TrainConfig,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the batch loss over every table entry."""
    anchors, positives = _encode_batch(vocab, batch)
    w = table.weights.copy()

    def loss_at() -> float:
        fwd = _Forward(w, anchors, positives, config.similarity)
        return mnrl_loss(fwd.S, config.scale)

    grad = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        orig = w[idx]
        w[idx] = orig + step
        up = loss_at()
        w[idx] = orig - step
        down = loss_at()
        w[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def grad_check(
    table: EmbeddingTable,
    vocab: Vocabulary,
    batch: Sequence[PairRecord],
    config: TrainConfig,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    analytic: np.ndarray | None = None,
) -> GradCheckReport:
    """Compare the analytic gradient with central differences.

    ``analytic`` overrides the gradient under test (a dense ``V x D`` array);
    by default it comes from :func:`backprop_batch`.
    """
    if analytic is None:
        analytic = backprop_batch(table, vocab, batch, config).to_dense(table.vocab_size)
    numeric = numeric_gradient(table, vocab, batch, config, step)
    abs_err = np.abs(analytic - numeric)
    rel_err = abs_err / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    worst = np.unravel_index(int(np.argmax(rel_err)), rel_err.shape)
    return GradCheckReport(
        max_rel_error=float(rel_err.max()),
        max_abs_error=float(abs_err.max()),
        worst_index=(int(worst[0]), int(worst[1])),
        tolerance=tolerance,
        n_entries=int(rel_err.size),
    )
