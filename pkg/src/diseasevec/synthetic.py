"""Synthetic clustered corpora for training sanity checks.

Each fake disease owns a disjoint token set.  With ``split_roles`` the set is
halved: anchors draw from the first half, positives from the second, so an
anchor and its positive share no tokens and a random table cannot tell them
apart.  Training must learn the association.
"""

from __future__ import annotations

import numpy as np

from .records import PairRecord


def make_cluster_corpus(
    n_diseases: int = 20,
    tokens_per_disease: int = 10,
    pairs_per_disease: int = 20,
    min_len: int = 5,
    max_len: int = 12,
    seed: int = 0,
    split_roles: bool = True,
) -> list[PairRecord]:
    rng = np.random.default_rng(seed)
    pairs: list[PairRecord] = []
    half = tokens_per_disease // 2
    for d in range(n_diseases):
        label = f"D{d:02d}"
        tokens = [f"d{d:02d}t{k}" for k in range(tokens_per_disease)]
        anchor_pool = tokens[:half] if split_roles else tokens
        positive_pool = tokens[half:] if split_roles else tokens
        made = 0
        while made < pairs_per_disease:
            anchor = " ".join(rng.choice(anchor_pool, rng.integers(min_len, max_len + 1)))
            positive = " ".join(rng.choice(positive_pool, rng.integers(min_len, max_len + 1)))
            if anchor == positive:
                continue
            pairs.append(PairRecord(anchor, positive, label, source_id=f"{label}-{made}"))
            made += 1
    return pairs
