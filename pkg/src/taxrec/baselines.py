"""Non-taxonomy recommenders for the comparison harness.

Popularity and average-embedding baselines run locally; the direct LLM
baseline reuses the recommendation pipeline with the taxonomy disabled.
Pretrained-checkpoint baselines are consumed as external result files by
the evaluation module instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from . import gateway
from .catalog import CategorizedPool, Interaction, ItemPool
from .core import InteractionSequence, RankedList, rank_scores
from .errors import TaxRecError
from .matchers import Embedder
from .recommender import Recommendation, RecommendConfig, recommend


@dataclass(frozen=True)
class PopularityTable:
    """Global interaction counts per item."""

    counts: Mapping[str, int]

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction]) -> "PopularityTable":
        counts: dict[str, int] = {}
        for record in interactions:
            counts[record.item_id] = counts.get(record.item_id, 0) + 1
        return cls(counts=counts)


def popularity_recommend(
    table: PopularityTable, history: InteractionSequence, k: int
) -> RankedList:
    """Most-interacted items first, excluding items already in the history."""
    if not table.counts:
        raise TaxRecError("popularity table is empty")
    seen = {item.id for item in history.history}
    scores = [
        (item_id, float(count)) for item_id, count in table.counts.items() if item_id not in seen
    ]
    return rank_scores(scores, k)


class AverageEmbeddingRecommender:
    """Ranks by inner product between item vectors and the mean history vector.

    Item title embeddings are computed once per pool and reused across
    queries.
    """

    def __init__(self, embedder: Embedder, pool: ItemPool) -> None:
        self.pool = pool
        self._ids = [item.id for item in pool.items]
        vectors = embedder.embed([item.title for item in pool.items])
        self._matrix = np.asarray(vectors, dtype=float)
        self._by_id = {item_id: row for item_id, row in zip(self._ids, self._matrix)}

    def recommend(self, history: InteractionSequence, k: int) -> RankedList:
        if not history.history:
            raise TaxRecError("cannot average an empty history")
        rows = []
        for item in history.history:
            row = self._by_id.get(item.id)
            if row is None:
                raise TaxRecError(f"history item {item.id!r} not in pool")
            rows.append(row)
        user_vector = np.mean(rows, axis=0)
        seen = {item.id for item in history.history}
        products = self._matrix @ user_vector
        scores = [
            (item_id, float(score))
            for item_id, score in zip(self._ids, products)
            if item_id not in seen
        ]
        return rank_scores(scores, k)


def average_embedding_recommend(
    embedder: Embedder, pool: ItemPool, history: InteractionSequence, k: int
) -> RankedList:
    """One-shot convenience wrapper around :class:`AverageEmbeddingRecommender`."""
    return AverageEmbeddingRecommender(embedder, pool).recommend(history, k)


def direct_llm_recommend(
    provider: gateway.Provider,
    history: InteractionSequence,
    pool: ItemPool,
    k: int,
    matcher: str = "exact_title",
    *,
    domain_label: str | None = None,
    embedder: Embedder | None = None,
) -> Recommendation:
    """Ask the model for recommendations from raw titles, no taxonomy.

    The free-text reply is mapped onto the pool with the chosen matcher;
    an out-of-pool reply simply scores nothing, it can never inject an
    unknown item id.
    """
    cfg = RecommendConfig(k=k, matcher=matcher, use_taxonomy=False)
    shim = CategorizedPool(taxonomy_ref=("", 0), entries={}, coverage=0.0, pool=pool)
    return recommend(
        provider,
        history,
        shim,
        t=None,
        cfg=cfg,
        domain_label=domain_label or pool.domain_label,
        embedder=embedder,
    )
