"""Pair / triplet / disease records and their file formats."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

from .errors import DuplicateCode, MalformedLine
from .vocab import tokenize


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class DiseaseEntry:
    code: str
    name: str


@dataclass(frozen=True)
class PairRecord:
    """An anchor/positive training pair labelled with its disease code."""

    anchor: str
    positive: str
    label: str
    source_id: str | None = None

    def __post_init__(self) -> None:
        if not self.anchor or not self.positive or not self.label:
            raise ValueError("anchor, positive and label must be non-empty")
        if _normalize_ws(self.anchor) == _normalize_ws(self.positive):
            raise ValueError("anchor and positive are identical")

    def to_json(self) -> dict:
        out = asdict(self)
        if out["source_id"] is None:
            del out["source_id"]
        return out


@dataclass(frozen=True)
class TripletRecord:
    anchor: str
    positive: str
    negative: str
    anchor_label: str | None = None
    negative_label: str | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def load_diseases(path: str | Path) -> list[DiseaseEntry]:
    """Parse a ``code<TAB>name`` file.  Blank lines are skipped."""
    entries: list[DiseaseEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise MalformedLine(f"{path}:{lineno}: expected 'code\\tname'")
            code, name = parts[0].strip(), parts[1].strip()
            if code in seen:
                raise DuplicateCode(f"{path}:{lineno}: duplicate code {code!r}")
            seen.add(code)
            entries.append(DiseaseEntry(code, name))
    return entries


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise MalformedLine(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require_str(obj: dict, key: str, where: str, optional: bool = False) -> str | None:
    value = obj.get(key)
    if value is None and optional:
        return None
    if not isinstance(value, str):
        raise MalformedLine(f"{where}: field {key!r} must be a string")
    return value


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[PairRecord]:
    pairs = []
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        try:
            pairs.append(
                PairRecord(
                    anchor=_require_str(obj, "anchor", where),
                    positive=_require_str(obj, "positive", where),
                    label=_require_str(obj, "label", where),
                    source_id=_require_str(obj, "source_id", where, optional=True),
                )
            )
        except ValueError as exc:
            raise MalformedLine(f"{where}: {exc}") from None
    return pairs


def save_pairs(pairs: Iterable[PairRecord], path: str | Path) -> None:
    write_jsonl((p.to_json() for p in pairs), path)


def load_triplets(path: str | Path) -> list[TripletRecord]:
    """Load and validate a triplet file; every text must have >= 1 token."""
    triplets = []
    for lineno, obj in _read_jsonl(path):
        where = f"{path}:{lineno}"
        rec = TripletRecord(
            anchor=_require_str(obj, "anchor", where),
            positive=_require_str(obj, "positive", where),
            negative=_require_str(obj, "negative", where),
            anchor_label=_require_str(obj, "anchor_label", where, optional=True),
            negative_label=_require_str(obj, "negative_label", where, optional=True),
        )
        for role in ("anchor", "positive", "negative"):
            if not tokenize(getattr(rec, role)):
                raise MalformedLine(f"{where}: {role} has no tokens")
        triplets.append(rec)
    return triplets


def save_triplets(triplets: Iterable[TripletRecord], path: str | Path) -> None:
    write_jsonl((t.to_json() for t in triplets), path)
