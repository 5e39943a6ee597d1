"""The recommendation phase: categorized history in, ranked items out.

Maps a user's history onto the categorized pool, prompts the model for a
feature-formatted recommendation, parses it into a feature set, and ranks
the pool by feature intersection through an inverted index. All ablation
switches (taxonomy off, free-text matchers, title toggles) live here.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from . import gateway
from ._textparse import extract_pairs, iter_content_lines
from .catalog import CategorizedPool, ItemPool
from .core import (
    CategorizedItem,
    FeaturePair,
    FeatureSet,
    InteractionSequence,
    Item,
    RankedList,
    Taxonomy,
    normalize_text,
    pair_set_intersection_size,
    rank_scores,
)
from .errors import ParseError, StageError, TaxRecError
from .matchers import Embedder, MATCHER_METHODS, score_titles_against_text
from .taxonomy import taxonomy_to_prompt_text, truncate_features

# Reserved key for title lines when recommendations carry titles.
TITLE_KEY = "title"

_FORMAT_REMINDER = "Respond with one 'feature: value' line per feature of the taxonomy."


@dataclass(frozen=True)
class RecommendConfig:
    """Switches for the recommendation pipeline and its ablations."""

    k: int = 10
    history_with_titles: bool = True
    recommend_with_titles: bool = False
    matcher: str = "taxonomy"
    taxonomy_feature_count: int = 10
    use_taxonomy: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.taxonomy_feature_count < 1:
            raise ValueError("taxonomy_feature_count must be >= 1")
        if self.matcher not in MATCHER_METHODS:
            raise ValueError(f"unknown matcher {self.matcher!r}; expected one of {MATCHER_METHODS}")
        if not self.use_taxonomy and self.matcher not in ("exact_title", "embedding"):
            raise ValueError(
                "without a taxonomy there is no feature set to intersect; "
                "matcher must be 'exact_title' or 'embedding'"
            )

    def with_overrides(self, **changes) -> "RecommendConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Recommendation:
    """Ranked output plus the artifacts needed for audit."""

    ranked: RankedList
    feature_set: FeatureSet
    prompt_text: str
    raw_output: str


def categorize_history(
    history: Sequence[Item], pool: CategorizedPool
) -> list[CategorizedItem]:
    """Order-preserving lookup of history items in the categorized pool."""
    missing = sorted({item.id for item in history if item.id not in pool.entries})
    if missing:
        raise TaxRecError(f"history items not in categorized pool: {', '.join(missing)}")
    return [pool.entries[item.id] for item in history]


def _ordered_pairs(
    categorized: CategorizedItem, taxonomy: Taxonomy
) -> list[tuple[str, list[str]]]:
    by_key: dict[str, list[str]] = {}
    for pair in categorized.pairs:
        by_key.setdefault(pair.key, []).append(pair.value)
    ordered = []
    for name in taxonomy.feature_names:
        if name in by_key:
            ordered.append((name, sorted(by_key[name])))
    return ordered


def history_to_prompt_text(
    hc: Sequence[CategorizedItem], cfg: RecommendConfig, taxonomy: Taxonomy
) -> str:
    """One line per history item, pairs ordered by taxonomy feature order.

    With titles: ``Title — key: value; key: value``. Without: the feature
    list alone. Pairs for features outside the (possibly truncated)
    taxonomy are omitted.
    """
    lines = []
    for categorized in hc:
        segments = [
            f"{name}: {', '.join(values)}" for name, values in _ordered_pairs(categorized, taxonomy)
        ]
        feature_text = "; ".join(segments)
        if cfg.history_with_titles:
            line = f"{categorized.item.title}{gateway.TITLE_SEPARATOR}{feature_text}" if feature_text else categorized.item.title
        else:
            line = feature_text
        if line:
            lines.append(line)
    return "\n".join(lines)


def parse_feature_output(s: str, t: Taxonomy, cfg: RecommendConfig) -> FeatureSet:
    """Parse the model's recommendation text into a feature set.

    Key-value lines (bulleted, numbered, multi-valued, or embedded JSON)
    are kept when the key is a taxonomy feature. When recommendations carry
    titles, colon-free lines become pairs under the reserved ``title`` key.
    The raw text is preserved verbatim.
    """
    raw_pairs = extract_pairs(s)
    allowed = set(t.feature_names)
    pairs: set[FeaturePair] = set()
    for raw_key, raw_value in raw_pairs:
        key = normalize_text(raw_key)
        value = normalize_text(raw_value)
        if not key or not value:
            continue
        if key in allowed or (cfg.recommend_with_titles and key == TITLE_KEY):
            pairs.add(FeaturePair(key, value))
    if cfg.recommend_with_titles:
        for line in iter_content_lines(s):
            if ":" in line:
                continue
            title = normalize_text(line)
            if title:
                pairs.add(FeaturePair(TITLE_KEY, title))
    if not pairs:
        raise ParseError("no feature pairs parsed from recommendation output", raw_text=s)
    return FeatureSet(pairs=frozenset(pairs), raw_text=s)


@dataclass(frozen=True)
class PoolIndex:
    """Inverted index: feature pair -> item ids carrying it."""

    postings: Mapping[FeaturePair, tuple[str, ...]]
    item_ids: tuple[str, ...]
    include_titles: bool


def build_pool_index(pool: CategorizedPool, *, include_titles: bool = False) -> PoolIndex:
    """Build the pair -> item ids index once per (pool, taxonomy) pair.

    With ``include_titles``, every pool item also posts a ``title`` pair so
    title-carrying recommendations can match through the same scorer.
    """
    postings: dict[FeaturePair, list[str]] = {}
    for item in pool.pool.items:
        categorized = pool.entries.get(item.id)
        if categorized is not None:
            for pair in categorized.pairs:
                postings.setdefault(pair, []).append(item.id)
        if include_titles:
            title = normalize_text(item.title)
            if title:
                postings.setdefault(FeaturePair(TITLE_KEY, title), []).append(item.id)
    return PoolIndex(
        postings={pair: tuple(ids) for pair, ids in postings.items()},
        item_ids=tuple(item.id for item in pool.pool.items),
        include_titles=include_titles,
    )


def score_pool(
    f: FeatureSet,
    pool: CategorizedPool,
    *,
    index: PoolIndex | None = None,
    include_titles: bool = False,
) -> list[tuple[str, float]]:
    """Score every pool item by feature intersection with ``f``.

    Uses the inverted index, so cost scales with |f| times posting-list
    length rather than pool size times |f|. Output matches the naive
    per-item :func:`pair_set_intersection_size` scorer exactly, one
    (item_id, score) per pool item in pool order.
    """
    if index is None:
        index = build_pool_index(pool, include_titles=include_titles)
    accumulator: dict[str, int] = {}
    for pair in f.pairs:
        for item_id in index.postings.get(pair, ()):
            accumulator[item_id] = accumulator.get(item_id, 0) + 1
    return [(item_id, float(accumulator.get(item_id, 0))) for item_id in index.item_ids]


def match_freeform(
    s_raw: str,
    pool: ItemPool,
    method: str,
    embedder: Embedder | None = None,
) -> list[tuple[str, float]]:
    """Map raw model text onto the pool by text similarity.

    ``bleu`` scores each title as a smoothed sentence-BLEU candidate against
    the text, ``rouge`` uses ROUGE-L F1, ``embedding`` cosine similarity via
    the configured embedder, and ``exact_title`` normalized substring
    containment (0 or 1).
    """
    titles = {item.id: item.title for item in pool.items}
    return score_titles_against_text(titles, s_raw, method, embedder)


def _direct_history_text(history: Sequence[Item]) -> str:
    return "\n".join(item.title for item in history)


def recommend(
    provider: gateway.Provider,
    sequence: InteractionSequence,
    pool: CategorizedPool,
    t: Taxonomy | None,
    cfg: RecommendConfig,
    *,
    domain_label: str | None = None,
    embedder: Embedder | None = None,
    index: PoolIndex | None = None,
) -> Recommendation:
    """Run the full recommendation pipeline for one user sequence.

    With the taxonomy enabled: truncate features, look up the categorized
    history, prompt, parse the feature set, and rank by intersection (or by
    a free-text matcher for the matching ablation). With the taxonomy
    disabled (``t`` may be None): send raw titles and map the free-text
    reply onto the pool. The target item is never given to the model.
    """
    domain = domain_label or pool.pool.domain_label or "item"

    if not cfg.use_taxonomy:
        return _recommend_direct(provider, sequence, pool, cfg, domain, embedder)
    if t is None:
        raise StageError("truncate_taxonomy", ValueError("taxonomy required when use_taxonomy is on"))

    try:
        truncated = truncate_features(t, cfg.taxonomy_feature_count)
    except Exception as exc:
        raise StageError("truncate_taxonomy", exc)
    try:
        hc = categorize_history(sequence.history, pool)
    except Exception as exc:
        raise StageError("categorize_history", exc)
    try:
        history_text = history_to_prompt_text(hc, cfg, truncated)
        prompt = gateway.render_recommendation_prompt(
            domain, taxonomy_to_prompt_text(truncated), history_text, cfg.k
        )
    except Exception as exc:
        raise StageError("render_prompt", exc)
    try:
        response = provider.complete(gateway.LlmRequest(prompt=prompt))
    except Exception as exc:
        raise StageError("complete", exc)

    feature_set: FeatureSet
    try:
        feature_set = parse_feature_output(response.text, truncated, cfg)
    except ParseError as exc:
        if cfg.matcher != "taxonomy":
            feature_set = FeatureSet(pairs=frozenset(), raw_text=response.text)
        else:
            # One re-ask with a format reminder, then surface the failure.
            try:
                response = provider.complete(
                    gateway.LlmRequest(prompt=f"{prompt}\n\n{_FORMAT_REMINDER}")
                )
                feature_set = parse_feature_output(response.text, truncated, cfg)
            except Exception as retry_exc:
                raise StageError("parse_output", retry_exc) from exc

    try:
        if cfg.matcher == "taxonomy":
            if index is not None and index.include_titles != cfg.recommend_with_titles:
                raise ValueError("prebuilt index does not match the title-matching setting")
            scores = score_pool(
                feature_set, pool, index=index, include_titles=cfg.recommend_with_titles
            )
        else:
            scores = match_freeform(response.text, pool.pool, cfg.matcher, embedder)
    except Exception as exc:
        raise StageError("match", exc)
    ranked = rank_scores(scores, cfg.k)
    return Recommendation(
        ranked=ranked, feature_set=feature_set, prompt_text=prompt, raw_output=response.text
    )


def _recommend_direct(
    provider: gateway.Provider,
    sequence: InteractionSequence,
    pool: CategorizedPool,
    cfg: RecommendConfig,
    domain: str,
    embedder: Embedder | None,
) -> Recommendation:
    try:
        prompt = gateway.render_direct_recommendation_prompt(
            domain, _direct_history_text(sequence.history), cfg.k
        )
    except Exception as exc:
        raise StageError("render_prompt", exc)
    try:
        response = provider.complete(gateway.LlmRequest(prompt=prompt))
    except Exception as exc:
        raise StageError("complete", exc)
    try:
        scores = match_freeform(response.text, pool.pool, cfg.matcher, embedder)
    except Exception as exc:
        raise StageError("match", exc)
    ranked = rank_scores(scores, cfg.k)
    return Recommendation(
        ranked=ranked,
        feature_set=FeatureSet(pairs=frozenset(), raw_text=response.text),
        prompt_text=prompt,
        raw_output=response.text,
    )
