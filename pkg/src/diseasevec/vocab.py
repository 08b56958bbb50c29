"""Word-level tokenization and vocabulary construction.

Tokenization is deliberately simple and deterministic: lowercase, turn
punctuation and whitespace into separators, split.  Vocabulary ids are
assigned by descending corpus frequency with lexicographic tie-breaking so
that the same corpus always produces the same ids, whatever its order.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import EmptyCorpus, EmptyVocabulary, MalformedFile

UNK_TOKEN = "<unk>"
STRIP_CHARS = ".,;:!?()[]{}\"'/\\"

_SEPARATORS = re.compile("[" + re.escape(STRIP_CHARS) + r"\s]+")


def tokenize(text: str) -> list[str]:
    """Split ``text`` into lowercase tokens.

    >>> tokenize("Reduced sensation, in the HANDS.")
    ['reduced', 'sensation', 'in', 'the', 'hands']
    """
    return [tok for tok in _SEPARATORS.split(text.lower()) if tok]


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id map with ``<unk>`` reserved at id 0."""

    id_to_token: tuple[str, ...]
    frequencies: tuple[int, ...]
    min_freq: int = 1
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.id_to_token or self.id_to_token[0] != UNK_TOKEN:
            raise ValueError(f"id 0 must be {UNK_TOKEN!r}")
        if len(self.frequencies) != len(self.id_to_token):
            raise ValueError("frequencies and tokens differ in length")
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "token_to_id", mapping)

    @property
    def unk_id(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: object) -> bool:
        return token in self.token_to_id

    def as_dict(self) -> dict[str, int]:
        return dict(self.token_to_id)


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from raw documents.

    Args:
        corpus: Raw text documents.
        min_freq: Minimum corpus frequency for a token to be kept.

    Raises:
        EmptyCorpus: if ``corpus`` has no documents.
        EmptyVocabulary: if no token reaches ``min_freq``.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(tokenize(doc))
    if n_docs == 0:
        raise EmptyCorpus("corpus contains no documents")
    counts.pop(UNK_TOKEN, None)  # tokenize never emits it, but guard the reserved slot
    kept = sorted(
        ((tok, c) for tok, c in counts.items() if c >= min_freq),
        key=lambda item: (-item[1], item[0]),
    )
    if not kept:
        raise EmptyVocabulary(f"no token reaches min_freq={min_freq}")
    return Vocabulary(
        id_to_token=(UNK_TOKEN, *(tok for tok, _ in kept)),
        frequencies=(0, *(c for _, c in kept)),
        min_freq=min_freq,
    )


def encode(vocab: Vocabulary, text: str) -> list[int]:
    """Map ``text`` to token ids, sending unknown tokens to ``vocab.unk_id``."""
    lookup = vocab.token_to_id
    unk = vocab.unk_id
    return [lookup.get(tok, unk) for tok in tokenize(text)]


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    lines = [f"{tok}\t{freq}\n" for tok, freq in zip(vocab.id_to_token, vocab.frequencies)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    """Read a vocabulary file written by :func:`save_vocab`."""
    tokens: list[str] = []
    freqs: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0]:
                raise MalformedFile(f"{path}:{lineno}: expected '<token>\\t<frequency>'")
            try:
                freqs.append(int(parts[1]))
            except ValueError:
                raise MalformedFile(f"{path}:{lineno}: non-integer frequency {parts[1]!r}") from None
            tokens.append(parts[0])
    if not tokens or tokens[0] != UNK_TOKEN or freqs[0] != 0:
        raise MalformedFile(f"{path}: first line must be '{UNK_TOKEN}\\t0'")
    try:
        return Vocabulary(tuple(tokens), tuple(freqs))
    except ValueError as exc:
        raise MalformedFile(f"{path}: {exc}") from None
