"""Margin-based triplet evaluation and model comparison reports.

A triplet ``(A, P, N)`` is correct when ``S(A, P) > S(A, N) + margin``
(strictly); accuracy is the percentage of correct triplets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedding import SimilarityMetric, similarity
from .errors import ConfigError, ConflictingCell, EmptyDataset, MalformedLine
from .records import TripletRecord

Embedder = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class EvalConfig:
    margin: float = 0.0
    metric: SimilarityMetric = SimilarityMetric.COSINE
    per_example: bool = False

    def __post_init__(self) -> None:
        if not math.isfinite(self.margin) or self.margin < 0:
            raise ConfigError(f"margin must be finite and >= 0, got {self.margin}")
        try:
            object.__setattr__(self, "metric", SimilarityMetric(self.metric))
        except ValueError:
            raise ConfigError(f"unknown metric {self.metric!r}") from None


@dataclass(frozen=True)
class TripletOutcome:
    s_pos: float
    s_neg: float
    passed: bool


@dataclass
class EvalReport:
    total: int
    correct: int
    margin: float
    metric: SimilarityMetric
    per_example: list[TripletOutcome] | None = None

    @property
    def accuracy_percent(self) -> float:
        return 100.0 * self.correct / self.total

    def summary(self) -> str:
        return (
            f"triplets {self.total} correct {self.correct} "
            f"accuracy {self.accuracy_percent:.2f} margin {self.margin} metric {self.metric}"
        )


def eval_triplet(embedder: Embedder, triplet: TripletRecord, config: EvalConfig) -> TripletOutcome:
    a = embedder(triplet.anchor)
    s_pos = similarity(config.metric, a, embedder(triplet.positive))
    s_neg = similarity(config.metric, a, embedder(triplet.negative))
    return TripletOutcome(s_pos, s_neg, s_pos > s_neg + config.margin)


def evaluate(
    embedder: Embedder, triplets: Sequence[TripletRecord], config: EvalConfig = EvalConfig()
) -> EvalReport:
    if not triplets:
        raise EmptyDataset("no triplets to evaluate")
    outcomes = [eval_triplet(embedder, t, config) for t in triplets]
    return EvalReport(
        total=len(outcomes),
        correct=sum(o.passed for o in outcomes),
        margin=config.margin,
        metric=config.metric,
        per_example=outcomes if config.per_example else None,
    )


def oracle_evaluate(
    embedder: Embedder, triplets: Sequence[TripletRecord], config: EvalConfig = EvalConfig()
) -> EvalReport:
    """Straight-line re-implementation of :func:`evaluate` for cross-checking.

    Deliberately shares no similarity code with the main path: plain Python
    loops over float lists.
    """
    if len(triplets) == 0:
        raise EmptyDataset("no triplets to evaluate")
    use_cosine = SimilarityMetric(config.metric) == SimilarityMetric.COSINE
    correct = 0
    outcomes = []
    for t in triplets:
        a = [float(x) for x in embedder(t.anchor)]
        p = [float(x) for x in embedder(t.positive)]
        n = [float(x) for x in embedder(t.negative)]
        if len(a) != len(p) or len(a) != len(n):
            raise ValueError("embedding dimensions differ")
        ap = an = aa = pp = nn = 0.0
        for i in range(len(a)):
            ap += a[i] * p[i]
            an += a[i] * n[i]
            aa += a[i] * a[i]
            pp += p[i] * p[i]
            nn += n[i] * n[i]
        if use_cosine:
            na, np_, nn_ = math.sqrt(aa), math.sqrt(pp), math.sqrt(nn)
            s_pos = 0.0 if na < 1e-12 or np_ < 1e-12 else ap / (na * np_)
            s_neg = 0.0 if na < 1e-12 or nn_ < 1e-12 else an / (na * nn_)
        else:
            s_pos, s_neg = ap, an
        ok = s_pos > s_neg + config.margin
        correct += ok
        outcomes.append(TripletOutcome(s_pos, s_neg, ok))
    return EvalReport(
        total=len(triplets),
        correct=correct,
        margin=config.margin,
        metric=SimilarityMetric(config.metric),
        per_example=outcomes if config.per_example else None,
    )


@dataclass(frozen=True)
class ComparisonCell:
    model: str
    dataset: str
    report: EvalReport

    def to_json(self) -> dict:
        r = self.report
        return {
            "model": self.model,
            "dataset": self.dataset,
            "accuracy_percent": r.accuracy_percent,
            "total": r.total,
            "correct": r.correct,
            "margin": r.margin,
            "metric": str(r.metric),
        }


def compare_models(
    models: Sequence[tuple[str, Embedder]],
    datasets: Sequence[tuple[str, Sequence[TripletRecord]]],
    config: EvalConfig = EvalConfig(),
) -> list[ComparisonCell]:
    """Evaluate every model on every dataset; cells come out model-major."""
    if not models or not datasets:
        raise ValueError("need at least one model and one dataset")
    return [
        ComparisonCell(model_name, ds_name, evaluate(embedder, triplets, config))
        for model_name, embedder in models
        for ds_name, triplets in datasets
    ]


def similarity_probe(
    embedder: Embedder,
    query: str,
    candidates: Sequence[tuple[str, str]],
    metric: SimilarityMetric | str = SimilarityMetric.COSINE,
) -> list[tuple[str, float]]:
    """Score ``query`` against named candidate texts, best first (stable)."""
    q = embedder(query)
    scored = [(name, similarity(metric, q, embedder(text))) for name, text in candidates]
    order = sorted(range(len(scored)), key=lambda k: -scored[k][1])
    return [scored[k] for k in order]


# -- report formats ---------------------------------------------------------


@dataclass
class ComparisonTable:
    """Model x dataset accuracy grid, insertion-ordered."""

    models: list[str] = field(default_factory=list)
    datasets: list[str] = field(default_factory=list)
    cells: dict[tuple[str, str], float] = field(default_factory=dict)

    def add(self, model: str, dataset: str, accuracy: float) -> None:
        key = (model, dataset)
        if key in self.cells and self.cells[key] != accuracy:
            raise ConflictingCell(
                f"conflicting accuracies for model {model!r} on {dataset!r}: "
                f"{self.cells[key]} vs {accuracy}"
            )
        if model not in self.models:
            self.models.append(model)
        if dataset not in self.datasets:
            self.datasets.append(dataset)
        self.cells[key] = accuracy

    @classmethod
    def from_cells(cls, cells: Iterable[ComparisonCell]) -> "ComparisonTable":
        table = cls()
        for c in cells:
            table.add(c.model, c.dataset, c.report.accuracy_percent)
        return table

    def _rows(self) -> list[list[str]]:
        rows = []
        for m in self.models:
            row = [m]
            for d in self.datasets:
                acc = self.cells.get((m, d))
                row.append("-" if acc is None else f"{acc:.1f}")
            rows.append(row)
        return rows

    def to_markdown(self) -> str:
        header = ["Model", *(f"{d} (%)" for d in self.datasets)]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join(["---"] + [":---:"] * len(self.datasets)) + "|",
        ]
        lines += ["| " + " | ".join(r) + " |" for r in self._rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = ["model", *self.datasets]
        rows = [header, *self._rows()]
        widths = [max(len(r[k]) for r in rows) for k in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(w) if k == 0 else cell.rjust(w) for k, (cell, w) in enumerate(zip(r, widths)))
            for r in rows
        ) + "\n"


REPORT_KEYS = ("model", "dataset", "accuracy_percent", "total", "correct", "margin", "metric")


def write_report_jsonl(cells: Iterable[ComparisonCell], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cells:
            fh.write(json.dumps(c.to_json()) + "\n")


def read_report_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = [k for k in REPORT_KEYS if k not in obj]
            if missing:
                raise MalformedLine(f"{path}:{lineno}: missing keys {missing}")
            rows.append(obj)
    return rows


def merge_reports(paths: Sequence[str | Path]) -> ComparisonTable:
    table = ComparisonTable()
    for path in paths:
        for row in read_report_jsonl(path):
            table.add(str(row["model"]), str(row["dataset"]), float(row["accuracy_percent"]))
    return table
