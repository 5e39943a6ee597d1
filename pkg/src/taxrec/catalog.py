"""Item pool ingestion and the one-time per-item categorization phase.

Categorization results are cached in an append-only JSONL file keyed by a
taxonomy fingerprint, so interrupted runs resume without repeating completed
items and re-runs issue no provider calls at all.
"""
from __future__ import annotations

import csv
import json
import threading
import warnings
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping

from . import gateway
from ._textparse import extract_pairs
from .core import CategorizedItem, FeaturePair, Item, Taxonomy, normalize_text
from .errors import ParseError, TaxRecError
from .taxonomy import taxonomy_fingerprint, taxonomy_to_prompt_text

# Appended on the single re-ask after an unparseable categorization.
_FORMAT_REMINDER = "Respond with one 'feature: value' line per feature of the taxonomy."

_MALFORMED_LINE_LIMIT = 0.01


@dataclass(frozen=True)
class Interaction:
    """One raw interaction record from a dataset."""

    user_id: str
    item_id: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class ItemPool:
    domain_label: str
    items: tuple[Item, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("item pool must be non-empty")
        ids = [item.id for item in self.items]
        if len(ids) != len(set(ids)):
            raise ValueError("item ids must be unique within a pool")

    @cached_property
    def by_id(self) -> Mapping[str, Item]:
        return {item.id: item for item in self.items}


@dataclass(frozen=True)
class CategorizedPool:
    """The categorized item pool, tied to the taxonomy that produced it."""

    taxonomy_ref: tuple[str, int]  # (fingerprint, feature count)
    entries: Mapping[str, CategorizedItem]
    coverage: float
    pool: ItemPool


@dataclass
class CategorizeStats:
    """Counters surfaced by the categorization pass; safe under fan-out."""

    dropped_pairs: int = 0
    reasks: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def count_dropped(self) -> None:
        with self._lock:
            self.dropped_pairs += 1

    def count_reask(self) -> None:
        with self._lock:
            self.reasks += 1


def _check_malformed(label: str, malformed: int, total: int) -> None:
    if total and malformed / total > _MALFORMED_LINE_LIMIT:
        raise TaxRecError(
            f"{label}: {malformed} of {total} lines malformed (>{_MALFORMED_LINE_LIMIT:.0%})"
        )
    if malformed:
        warnings.warn(f"{label}: skipped {malformed} malformed line(s)", stacklevel=3)


def load_movielens(
    data_dir: Path, *, item_delimiter: str = "|", data_delimiter: str = "\t"
) -> tuple[ItemPool, list[Interaction]]:
    """Load a MovieLens-100k style directory.

    Expects ``u.item`` (pipe-delimited, title in the second field, latin-1)
    and ``u.data`` (tab-separated user/item/rating/timestamp); delimiters
    are overridable for variant dumps. Malformed lines are skipped with a
    counted warning; more than 1% malformed is an error. Interactions come
    back sorted per user by timestamp ascending.
    """
    data_dir = Path(data_dir)
    item_path = data_dir / "u.item"
    data_path = data_dir / "u.data"
    for path in (item_path, data_path):
        if not path.exists():
            raise FileNotFoundError(f"missing dataset file: {path}")

    items: list[Item] = []
    seen: set[str] = set()
    malformed = 0
    total = 0
    for line in item_path.read_text(encoding="latin-1").splitlines():
        if not line.strip():
            continue
        total += 1
        fields = line.split(item_delimiter)
        if len(fields) < 2 or not fields[0].strip() or not fields[1].strip():
            malformed += 1
            continue
        item_id = fields[0].strip()
        if item_id in seen:
            malformed += 1
            continue
        seen.add(item_id)
        items.append(Item(id=item_id, title=fields[1].strip()))
    _check_malformed(str(item_path), malformed, total)
    if not items:
        raise TaxRecError(f"{item_path}: no items parsed")

    interactions: list[Interaction] = []
    malformed = 0
    total = 0
    for line in data_path.read_text(encoding="latin-1").splitlines():
        if not line.strip():
            continue
        total += 1
        fields = line.split(data_delimiter)
        if len(fields) != 4:
            malformed += 1
            continue
        try:
            interactions.append(
                Interaction(
                    user_id=fields[0].strip(),
                    item_id=fields[1].strip(),
                    rating=float(fields[2]),
                    timestamp=int(fields[3]),
                )
            )
        except ValueError:
            malformed += 1
    _check_malformed(str(data_path), malformed, total)

    interactions.sort(key=lambda r: (r.user_id, r.timestamp or 0, r.item_id))
    return ItemPool(domain_label="movie", items=tuple(items)), interactions


def load_bookcrossing(
    data_dir: Path, *, delimiter: str = ";"
) -> tuple[ItemPool, list[Interaction]]:
    """Load a BookCrossing style directory.

    Expects ``BX-Books.csv`` and ``BX-Book-Ratings.csv``: semicolon-delimited
    (overridable), double-quoted, latin-1. Titles keep author and publisher
    as extra fields; the pool is restricted to books that appear in the
    interaction records (which carry no timestamps).
    """
    data_dir = Path(data_dir)
    books_path = data_dir / "BX-Books.csv"
    ratings_path = data_dir / "BX-Book-Ratings.csv"
    for path in (books_path, ratings_path):
        if not path.exists():
            raise FileNotFoundError(f"missing dataset file: {path}")

    def rows(path: Path) -> Iterable[list[str]]:
        with path.open(encoding="latin-1", newline="") as handle:
            reader = csv.reader(handle, delimiter=delimiter, quotechar='"', escapechar="\\")
            for row in reader:
                yield row

    books: dict[str, Item] = {}
    malformed = 0
    total = 0
    for index, row in enumerate(rows(books_path)):
        if index == 0 and row and row[0].strip().upper() == "ISBN":
            continue
        total += 1
        if len(row) < 5 or not row[0].strip() or not row[1].strip():
            malformed += 1
            continue
        isbn = row[0].strip()
        if isbn in books:
            malformed += 1
            continue
        books[isbn] = Item(
            id=isbn,
            title=row[1].strip(),
            extra={"author": row[2].strip(), "publisher": row[4].strip()},
        )
    _check_malformed(str(books_path), malformed, total)

    interactions: list[Interaction] = []
    malformed = 0
    total = 0
    for index, row in enumerate(rows(ratings_path)):
        if index == 0 and row and row[0].strip().upper() in ("USER-ID", "USER_ID"):
            continue
        total += 1
        if len(row) != 3 or not row[0].strip() or not row[1].strip():
            malformed += 1
            continue
        try:
            rating = float(row[2])
        except ValueError:
            malformed += 1
            continue
        interactions.append(Interaction(user_id=row[0].strip(), item_id=row[1].strip(), rating=rating))
    _check_malformed(str(ratings_path), malformed, total)

    interactions = [r for r in interactions if r.item_id in books]
    interacted = {r.item_id for r in interactions}
    items = tuple(item for isbn, item in books.items() if isbn in interacted)
    if not items:
        raise TaxRecError(f"{books_path}: no interacted books found")
    return ItemPool(domain_label="book", items=items), interactions


def item_prompt_text(item: Item) -> str:
    """The textual form of an item inside prompts: ``title (extra, fields)``."""
    if item.extra:
        details = ", ".join(v for v in item.extra.values() if v)
        if details:
            return f"{item.title} ({details})"
    return item.title


def _parse_pairs(text: str, taxonomy: Taxonomy, stats: CategorizeStats | None) -> frozenset[FeaturePair]:
    raw_pairs = extract_pairs(text)
    allowed = set(taxonomy.feature_names)
    kept: set[FeaturePair] = set()
    for raw_key, raw_value in raw_pairs:
        key = normalize_text(raw_key)
        value = normalize_text(raw_value)
        if not key or not value:
            continue
        if key not in allowed:
            if stats is not None:
                stats.count_dropped()
            continue
        kept.add(FeaturePair(key, value))
    return frozenset(kept)


def _categorize_with_raw(
    provider: gateway.Provider,
    item: Item,
    taxonomy: Taxonomy,
    domain_label: str | None,
    stats: CategorizeStats | None,
    max_output_tokens: int,
) -> tuple[CategorizedItem, str]:
    domain = domain_label or taxonomy.domain_label or "item"
    prompt = gateway.render_categorization_prompt(
        domain, taxonomy_to_prompt_text(taxonomy), item_prompt_text(item)
    )
    response = provider.complete(gateway.LlmRequest(prompt=prompt, max_output_tokens=max_output_tokens))
    pairs = _parse_pairs(response.text, taxonomy, stats)
    if not pairs:
        if stats is not None:
            stats.count_reask()
        response = provider.complete(
            gateway.LlmRequest(prompt=f"{prompt}\n\n{_FORMAT_REMINDER}", max_output_tokens=max_output_tokens)
        )
        pairs = _parse_pairs(response.text, taxonomy, stats)
        if not pairs:
            raise ParseError(
                f"no feature pairs parsed for item {item.id!r}", raw_text=response.text
            )
    return CategorizedItem(item=item, pairs=pairs), response.text


def categorize_item(
    provider: gateway.Provider,
    item: Item,
    taxonomy: Taxonomy,
    *,
    domain_label: str | None = None,
    stats: CategorizeStats | None = None,
    max_output_tokens: int = 512,
) -> CategorizedItem:
    """Categorize one item against the taxonomy.

    Pairs whose key is not a taxonomy feature are dropped (and counted via
    ``stats``); values outside the taxonomy's enumerated lists are kept.
    One automatic re-ask on unparseable output, then :class:`ParseError`.
    """
    categorized, _ = _categorize_with_raw(
        provider, item, taxonomy, domain_label, stats, max_output_tokens
    )
    return categorized


def _cache_path(cache_dir: Path, domain_label: str) -> Path:
    return Path(cache_dir) / domain_label / "items.jsonl"


def _load_cached_entries(
    path: Path, fingerprint: str, pool: ItemPool
) -> dict[str, CategorizedItem]:
    entries: dict[str, CategorizedItem] = {}
    if not path.exists():
        return entries
    by_id = pool.by_id
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            if record.get("taxonomy_fingerprint") != fingerprint:
                continue
            item = by_id.get(record.get("item_id"))
            if item is None:
                continue
            pairs = frozenset(
                FeaturePair(p["key"], p["value"]) for p in record.get("pairs", [])
            )
            if pairs:
                entries[item.id] = CategorizedItem(item=item, pairs=pairs)
    return entries


def _append_cache_record(
    handle, item_id: str, fingerprint: str, categorized: CategorizedItem, raw_text: str
) -> None:
    record = {
        "item_id": item_id,
        "taxonomy_fingerprint": fingerprint,
        "pairs": [
            {"key": p.key, "value": p.value}
            for p in sorted(categorized.pairs, key=lambda p: (p.key, p.value))
        ],
        "raw_text": raw_text,
    }
    handle.write(json.dumps(record, sort_keys=True) + "\n")
    handle.flush()


def load_categorized_pool(
    cache_dir: Path, pool: ItemPool, taxonomy: Taxonomy, model_name: str
) -> CategorizedPool:
    """Read-only view of the cache; no provider calls.

    Errors if the cache does not fully cover the pool for this taxonomy
    fingerprint.
    """
    fingerprint = taxonomy_fingerprint(model_name, taxonomy)
    entries = _load_cached_entries(_cache_path(cache_dir, pool.domain_label), fingerprint, pool)
    coverage = len(entries) / len(pool.items)
    if coverage < 1.0:
        raise TaxRecError(
            f"categorized pool incomplete for domain {pool.domain_label!r} "
            f"(coverage {coverage:.1%}); run 'taxrec categorize' first"
        )
    return CategorizedPool(
        taxonomy_ref=(fingerprint, len(taxonomy.features)),
        entries=entries,
        coverage=coverage,
        pool=pool,
    )


def categorize_pool(
    provider: gateway.Provider,
    pool: ItemPool,
    taxonomy: Taxonomy,
    cache_dir: Path,
    *,
    max_workers: int = 4,
    failure_threshold: float = 0.02,
    progress: Callable[[int, int, int], None] | None = None,
    stats: CategorizeStats | None = None,
) -> CategorizedPool:
    """Categorize every item in the pool, resuming from the cache.

    Items already cached for this taxonomy fingerprint are not re-sent.
    Each completed item is appended to the cache immediately, so an
    interrupted run resumes where it left off. Per-item failures are
    tolerated up to ``failure_threshold`` of the pool, then the run fails
    (successes stay cached).
    """
    fingerprint = taxonomy_fingerprint(provider.model_name, taxonomy)
    path = _cache_path(cache_dir, pool.domain_label)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = _load_cached_entries(path, fingerprint, pool)
    todo = [item for item in pool.items if item.id not in entries]
    stats = stats if stats is not None else CategorizeStats()

    done = len(entries)
    total = len(pool.items)
    if progress is not None:
        progress(done, total, 0)

    if todo:
        with path.open("a", encoding="utf-8") as handle:
            with ThreadPoolExecutor(max_workers=max_workers) as executor:
                def worker(item: Item) -> tuple[CategorizedItem, str]:
                    return _categorize_with_raw(
                        provider, item, taxonomy, pool.domain_label, stats, 512
                    )

                pending = {executor.submit(worker, item): item for item in todo}
                # Cache writes happen only on this thread: one writer, many
                # categorization workers.
                while pending:
                    finished, _ = wait(pending, return_when=FIRST_COMPLETED)
                    for future in finished:
                        item = pending.pop(future)
                        try:
                            categorized, raw_text = future.result()
                        except Exception as exc:
                            stats.failures.append((item.id, str(exc)))
                        else:
                            entries[item.id] = categorized
                            _append_cache_record(handle, item.id, fingerprint, categorized, raw_text)
                            done += 1
                        if progress is not None:
                            progress(done, total, len(stats.failures))

    failure_fraction = len(stats.failures) / total
    if failure_fraction > failure_threshold:
        raise TaxRecError(
            f"categorization failed for {len(stats.failures)} of {total} items "
            f"({failure_fraction:.1%} > {failure_threshold:.0%}); "
            f"first: {stats.failures[0][0]}: {stats.failures[0][1]}"
        )

    coverage = len(entries) / total
    return CategorizedPool(
        taxonomy_ref=(fingerprint, len(taxonomy.features)),
        entries=entries,
        coverage=coverage,
        pool=pool,
    )
