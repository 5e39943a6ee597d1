"""Shared domain vocabulary: items, taxonomies, feature pairs, histories, rankings.

Everything here is immutable after construction and safe to share across
threads. Text normalization is centralized in :func:`normalize_text` so that
feature-pair intersection is well-defined over free-form LLM output.
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Mapping, Sequence

# Characters stripped from the ends of a normalized string. Plain ASCII
# punctuation plus the common curly quotes LLMs like to emit.
_STRIP_CHARS = string.punctuation + string.whitespace + "‘’“”«»"


def normalize_text(raw: str) -> str:
    """Normalize free text for exact matching.

    Lowercases, trims, collapses internal whitespace runs to single spaces,
    and strips surrounding punctuation/quote characters. Idempotent:
    ``normalize_text(normalize_text(x)) == normalize_text(x)``.
    """
    lowered = raw.lower()
    collapsed = " ".join(lowered.split())
    return collapsed.strip(_STRIP_CHARS)


@dataclass(frozen=True)
class Item:
    """A catalog item: an opaque id plus its raw (possibly ambiguous) title."""

    id: str
    title: str
    extra: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("item id must be non-empty")


@dataclass(frozen=True)
class Feature:
    """One taxonomy feature: a normalized name and its ordered value list."""

    name: str
    values: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError(f"feature {self.name!r} has no values")


@dataclass(frozen=True)
class Taxonomy:
    """Flat feature dictionary for one domain.

    Feature order is preserved from generation; truncation and prompt
    rendering both rely on it.
    """

    domain_label: str
    features: tuple[Feature, ...]

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(names) != len(set(names)):
            raise ValueError("duplicate feature names after normalization")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)


@dataclass(frozen=True, order=True)
class FeaturePair:
    """A normalized (feature name, value) pair."""

    key: str
    value: str

    def __post_init__(self) -> None:
        if not self.key or not self.value:
            raise ValueError("feature pair key and value must be non-empty")


def make_pair(key: str, value: str) -> FeaturePair:
    """Build a FeaturePair, normalizing both sides."""
    return FeaturePair(normalize_text(key), normalize_text(value))


@dataclass(frozen=True)
class CategorizedItem:
    """An item plus the feature pairs assigned to it by the categorizer."""

    item: Item
    pairs: frozenset[FeaturePair]


@dataclass(frozen=True)
class FeatureSet:
    """Feature pairs parsed from a recommendation response.

    ``raw_text`` keeps the unparsed output verbatim for free-text matching
    and audit.
    """

    pairs: frozenset[FeaturePair]
    raw_text: str


@dataclass(frozen=True)
class InteractionSequence:
    """One evaluation instance: a user's padded history and the held-out target.

    Builders pad ``history`` to the configured threshold (default 10), so
    duplicated entries are expected; the target never appears in the history.
    """

    user_id: str
    history: tuple[Item, ...]
    target: Item

    def __post_init__(self) -> None:
        if not self.history:
            raise ValueError("history must be non-empty")
        if any(h.id == self.target.id for h in self.history):
            raise ValueError(f"target {self.target.id!r} appears in history")


@dataclass(frozen=True)
class RankedList:
    """Scored top-k items, sorted by score descending with id tie-break."""

    entries: tuple[tuple[str, float], ...]
    k: int

    def __post_init__(self) -> None:
        ids = [item_id for item_id, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate item ids in ranked list")
        if len(self.entries) > self.k:
            raise ValueError("ranked list longer than requested depth")
        scores = [score for _, score in self.entries]
        if any(earlier < later for earlier, later in zip(scores, scores[1:])):
            raise ValueError("ranked list scores must be non-increasing")

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(item_id for item_id, _ in self.entries)

    def rank_of(self, item_id: str) -> int | None:
        """1-based rank of ``item_id``, or None if absent."""
        for rank, (candidate, _) in enumerate(self.entries, start=1):
            if candidate == item_id:
                return rank
        return None


def rank_scores(scores: Sequence[tuple[str, float]], k: int) -> RankedList:
    """Turn per-item scores into a RankedList.

    Ties are broken by ascending item id so that ranking is a total order
    and re-runs are byte-identical.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(scores, key=lambda entry: (-entry[1], entry[0]))
    return RankedList(entries=tuple(ordered[:k]), k=k)


def pair_set_intersection_size(
    a: frozenset[FeaturePair] | set[FeaturePair],
    b: frozenset[FeaturePair] | set[FeaturePair],
) -> int:
    """Size of the intersection of two feature-pair sets.

    Equality is exact (key, value) string equality; both inputs are assumed
    normalized. This is the core ranking score.
    """
    if len(a) > len(b):
        a, b = b, a
    return sum(1 for pair in a if pair in b)
