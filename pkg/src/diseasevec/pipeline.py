"""Synthetic pair generation, cleaning, splitting and triplet construction.

Generation goes through a provider: anything with a
``generate(GenerationRequest) -> GenerationResponse`` method.  Two ship
here: :class:`StubProvider`, an offline deterministic template filler, and
:class:`HttpProvider`, which posts JSON to a configured endpoint.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import BadFractions, ConfigError, ProviderError, SingleLabel
from .records import DiseaseEntry, PairRecord, TripletRecord
from .vocab import tokenize

log = logging.getLogger(__name__)

MAX_REGENERATIONS = 3
DROP_REASONS = ("empty", "name-leak", "duplicate")


@dataclass(frozen=True)
class GenerationRequest:
    template_id: str
    disease: str
    max_length: int = 512
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "template_id": self.template_id,
            "disease": self.disease,
            "max_length": self.max_length,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    provider: str


class Provider(Protocol):
    def generate(self, request: GenerationRequest) -> GenerationResponse: ...


def leaks_name(text: str, name: str) -> bool:
    return name.casefold() in text.casefold()


def _stable_int(*parts: object) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


_STUB_FINDINGS = (
    "persistent fatigue", "low-grade fever", "joint pain", "shortness of breath",
    "dry cough", "night sweats", "abdominal cramping", "loss of appetite",
    "tingling in the extremities", "blurred vision", "skin rash", "muscle weakness",
    "frequent headaches", "unexplained weight loss", "swollen lymph nodes",
    "chest tightness", "nausea after meals", "reduced reflexes", "dizziness on standing",
    "chronic itching",
)
_STUB_TEMPLATES = {
    "description": "The condition commonly presents with {0}, {1} and {2}.",
    "paraphrase": "Patients often report {0} together with {1}; {2} may follow.",
    "qa_answer": "Typical signs include {0}, {1}, and in some cases {2}.",
}


class StubProvider:
    """Offline provider: fills a fixed template with findings chosen by hash.

    The output depends only on ``(template_id, disease, seed)`` and never
    contains the disease name.
    """

    name = "stub"

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        base = request.template_id.split("/", 1)[0]
        template = _STUB_TEMPLATES.get(base, _STUB_TEMPLATES["description"])
        rng = random.Random(_stable_int(request.template_id, request.disease, request.seed))
        findings = rng.sample(_STUB_FINDINGS, 3)
        text = template.format(*findings)[: request.max_length]
        return GenerationResponse(text=text, provider=self.name)


class HttpProvider:
    """POSTs ``{"template_id", "disease", "max_length", "seed"}`` and reads ``{"text"}``."""

    name = "http"

    def __init__(
        self,
        url: str,
        token: str | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = url
        self.token = token
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            resp = self._client.post(self.url, json=request.to_json(), headers=headers)
            resp.raise_for_status()
            payload = resp.json()
        except httpx.TimeoutException as exc:
            raise ProviderError(f"timeout contacting {self.url}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderError(f"transport error from {self.url}: {exc}") from exc
        except ValueError as exc:
            raise ProviderError(f"non-JSON response from {self.url}") from exc
        text = payload.get("text") if isinstance(payload, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ProviderError(f"response from {self.url} lacks a non-empty 'text' field")
        return GenerationResponse(text=text, provider=self.name)


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "stub"
    url: str | None = None
    token: str | None = None
    timeout: float = 30.0
    max_in_flight: int = 1

    def build(self) -> Provider:
        if self.kind == "stub":
            return StubProvider()
        if not self.url:
            raise ConfigError("provider.url is required for the http provider")
        return HttpProvider(self.url, self.token, self.timeout)


def parse_provider_config(text: str, environ: Mapping[str, str] = os.environ) -> ProviderConfig:
    """Parse ``provider.*`` keys from ``key = value`` lines.

    ``provider.token_env`` names an environment variable holding the token;
    an explicit ``provider.token`` wins over it.
    """
    raw: dict[str, str] = {}
    allowed = {"kind", "url", "token", "token_env", "timeout", "max_in_flight"}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (p.strip() for p in line.partition("="))
        if not sep or not key.startswith("provider.") or key[9:] not in allowed:
            raise ConfigError(f"line {lineno}: unknown or malformed provider key {key!r}")
        raw[key[9:]] = value
    token = raw.get("token")
    if token is None and "token_env" in raw:
        token = environ.get(raw["token_env"])
        if token is None:
            raise ConfigError(f"environment variable {raw['token_env']!r} is not set")
    kind = raw.get("kind", "http" if "url" in raw else "stub")
    if kind not in ("stub", "http"):
        raise ConfigError(f"unknown provider kind {kind!r}")
    try:
        timeout = float(raw.get("timeout", 30.0))
        in_flight = int(raw.get("max_in_flight", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if in_flight < 1:
        raise ConfigError("provider.max_in_flight must be >= 1")
    return ProviderConfig(kind, raw.get("url"), token, timeout, in_flight)


def _generate_clean_text(
    provider: Provider, entry: DiseaseEntry, template_id: str, max_length: int, seed: int
) -> str | None:
    for attempt in range(1 + MAX_REGENERATIONS):
        req = GenerationRequest(template_id, entry.name, max_length, _stable_int(seed, attempt) % 2**31)
        try:
            text = provider.generate(req).text
        except ProviderError as exc:
            raise ProviderError(str(exc), code=entry.code) from exc
        if not text.strip():
            raise ProviderError("empty generated text", code=entry.code)
        if not leaks_name(text, entry.name):
            return text
        log.debug("name leak for %s (attempt %d)", entry.code, attempt + 1)
    return None


def generate_pairs(
    diseases: Sequence[DiseaseEntry],
    provider: Provider,
    template_id: str = "description",
    per_disease: int = 1,
    seed: int = 0,
    *,
    positive_template_id: str = "paraphrase",
    max_length: int = 512,
    max_in_flight: int = 1,
) -> list[PairRecord]:
    """Generate ``per_disease`` anchor/positive pairs for each disease.

    A text that contains its disease name is regenerated up to three times;
    if it still leaks, that pair is skipped with a warning.  Output order is
    by (disease order, pair index) regardless of ``max_in_flight``.
    """
    if per_disease < 1:
        raise ValueError("per_disease must be >= 1")
    jobs = [(entry, k) for entry in diseases for k in range(per_disease)]

    def run(job: tuple[DiseaseEntry, int]) -> PairRecord | None:
        entry, k = job
        texts = []
        for role, tid in (("anchor", template_id), ("positive", positive_template_id)):
            text = _generate_clean_text(
                provider, entry, tid, max_length, _stable_int(seed, entry.code, role, k)
            )
            if text is None:
                log.warning(
                    "skipping %s pair %d: %s text still names the disease after %d regenerations",
                    entry.code, k, role, MAX_REGENERATIONS,
                )
                return None
            texts.append(text)
        try:
            return PairRecord(texts[0], texts[1], entry.code, source_id=f"{entry.code}:{k}")
        except ValueError:
            log.warning("skipping %s pair %d: anchor and positive are identical", entry.code, k)
            return None

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    return [r for r in results if r is not None]


@dataclass
class CleanResult:
    pairs: list[PairRecord]
    dropped: Counter = field(default_factory=Counter)

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())


def clean(pairs: Sequence[PairRecord], names: Mapping[str, str] | None = None) -> CleanResult:
    """Drop empty-token rows, name leaks and exact duplicates, in that order.

    ``names`` maps a label (disease code) to its disease name; labels missing
    from it are checked against the label text itself.
    """
    names = names or {}
    kept: list[PairRecord] = []
    dropped: Counter = Counter({reason: 0 for reason in DROP_REASONS})
    seen: set[tuple[str, str]] = set()
    for p in pairs:
        if not tokenize(p.anchor) or not tokenize(p.positive):
            dropped["empty"] += 1
            continue
        name = names.get(p.label, p.label)
        if leaks_name(p.anchor, name) or leaks_name(p.positive, name):
            dropped["name-leak"] += 1
            continue
        key = (p.anchor, p.positive)
        if key in seen:
            dropped["duplicate"] += 1
            continue
        seen.add(key)
        kept.append(p)
    return CleanResult(kept, dropped)


def shuffle_split(
    pairs: Sequence, seed: int, fractions: tuple[float, float] = (0.8, 0.2)
) -> tuple[list, list]:
    """Seeded shuffle, then a contiguous (train, eval) split."""
    if len(fractions) != 2 or any(not f > 0 for f in fractions) or not math.isclose(
        sum(fractions), 1.0, rel_tol=0.0, abs_tol=1e-9
    ):
        raise BadFractions(f"fractions must be two positive numbers summing to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    n_train = int(round(len(pairs) * fractions[0]))
    return shuffled[:n_train], shuffled[n_train:]


def make_triplets(
    pairs: Sequence[PairRecord], seed: int, negatives_per_pair: int = 1
) -> list[TripletRecord]:
    """Pair each (anchor, positive) with positives of other-label pairs.

    Negatives are drawn uniformly by rejection sampling over all pairs.
    """
    if negatives_per_pair < 1:
        raise ValueError("negatives_per_pair must be >= 1")
    if len({p.label for p in pairs}) < 2:
        raise SingleLabel("need at least two distinct labels to draw negatives")
    rng = np.random.default_rng(seed)
    out = []
    for p in pairs:
        for _ in range(negatives_per_pair):
            while True:
                q = pairs[int(rng.integers(len(pairs)))]
                if q.label != p.label:
                    break
            out.append(TripletRecord(p.anchor, p.positive, q.positive, p.label, q.label))
    return out


def load_provider_config(path: str | Path) -> ProviderConfig:
    return parse_provider_config(Path(path).read_text(encoding="utf-8"))
