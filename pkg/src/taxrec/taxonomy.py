"""The taxonomy dictionary: generate once per domain, parse, truncate, persist.

The taxonomy is the condensed stand-in for the item pool that gets embedded
into categorization and recommendation prompts.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import gateway
from ._textparse import extract_json_object, split_values
from .core import Feature, Taxonomy, normalize_text
from .errors import ParseError

# Appended to the prompt on the single automatic re-ask after a parse failure.
_FORMAT_REMINDER = (
    "Respond with only a JSON object that maps each feature name to an array of values."
)

_generation_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


@dataclass(frozen=True)
class TaxonomyDocument:
    """A generated taxonomy plus enough provenance to reproduce and cache it."""

    taxonomy: Taxonomy
    source_text: str
    created_at: str
    provider_fingerprint: tuple[str, str]  # (model_name, template hash)


def _features_from_mapping(obj: dict) -> list[tuple[str, list[str]]]:
    features: list[tuple[str, list[str]]] = []
    for key, value in obj.items():
        values: list[str] = []
        if isinstance(value, (list, tuple)):
            for element in value:
                if isinstance(element, (list, tuple)):
                    values.extend(str(e) for e in element)
                elif isinstance(element, dict):
                    values.extend(str(e) for e in element.keys())
                else:
                    values.append(str(element))
        elif isinstance(value, dict):
            # Nested value lists keyed by value name.
            values.extend(str(e) for e in value.keys())
        elif isinstance(value, (str, int, float)):
            values.extend(split_values(str(value)))
        if values:
            features.append((str(key), values))
    return features


def _features_from_json(obj: dict) -> list[tuple[str, list[str]]]:
    # Unwrap a single enclosing "taxonomy"/"features" key.
    for wrapper in ("taxonomy", "features"):
        if set(obj.keys()) == {wrapper}:
            inner = obj[wrapper]
            if isinstance(inner, dict):
                obj = inner
            elif isinstance(inner, list):
                return _features_from_feature_list(inner)
            break
    if isinstance(obj.get("features"), list):
        return _features_from_feature_list(obj["features"])
    return _features_from_mapping(obj)


def _features_from_feature_list(entries: list) -> list[tuple[str, list[str]]]:
    features: list[tuple[str, list[str]]] = []
    for entry in entries:
        if not isinstance(entry, dict):
            continue
        name = entry.get("name") or entry.get("feature")
        values = entry.get("values") or entry.get("value")
        if name is None or values is None:
            continue
        if not isinstance(values, (list, tuple)):
            values = [values]
        features.append((str(name), [str(v) for v in values]))
    return features


def _features_from_lines(text: str) -> list[tuple[str, list[str]]]:
    features: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        if ":" not in line:
            continue
        name, _, values_text = line.partition(":")
        values = split_values(values_text)
        if name.strip() and values:
            features.append((name.strip(), values))
    return features


def parse_taxonomy(text: str, domain_label: str = "") -> Taxonomy:
    """Extract a Taxonomy from provider output.

    Accepts a JSON object (flat ``{name: [values]}`` or nested
    ``{"features": [{"name", "values"}]}``), tolerating surrounding prose and
    code fences, and falls back to the canonical ``name: v1, v2`` line
    rendering. All names and values are normalized; duplicate feature names
    merge in first-seen order.
    """
    obj = extract_json_object(text)
    raw_features = _features_from_json(obj) if obj is not None else []
    if not raw_features:
        raw_features = _features_from_lines(text)
    if not raw_features:
        raise ParseError("no structured taxonomy found in provider output", raw_text=text)

    merged: dict[str, list[str]] = {}
    for raw_name, raw_values in raw_features:
        name = normalize_text(raw_name)
        if not name:
            continue
        bucket = merged.setdefault(name, [])
        for raw_value in raw_values:
            value = normalize_text(str(raw_value))
            if value and value not in bucket:
                bucket.append(value)

    features = tuple(
        Feature(name=name, values=tuple(values)) for name, values in merged.items() if values
    )
    if not features:
        raise ParseError("taxonomy has zero usable features", raw_text=text)
    return Taxonomy(domain_label=domain_label, features=features)


def truncate_features(t: Taxonomy, n: int) -> Taxonomy:
    """Keep the first ``min(n, |features|)`` features in generation order."""
    if n < 1:
        raise ValueError("feature count must be >= 1")
    if n >= len(t.features):
        return t
    return Taxonomy(domain_label=t.domain_label, features=t.features[:n])


def taxonomy_to_prompt_text(t: Taxonomy) -> str:
    """Canonical rendering: one ``name: v1, v2`` line per feature.

    Feature order is preserved; parsing the rendering reproduces the
    taxonomy (values are normalized and never contain the line delimiters).
    """
    return "\n".join(f"{f.name}: {', '.join(f.values)}" for f in t.features)


def taxonomy_fingerprint(model_name: str, t: Taxonomy) -> str:
    """Content address for caches derived from this (model, taxonomy) pair.

    Changing the categorization template, the model, the feature count, or
    any feature content changes the fingerprint.
    """
    payload = "|".join(
        (model_name, gateway.template_hash("categorization"), taxonomy_to_prompt_text(t))
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _taxonomy_path(cache_dir: Path, domain_label: str) -> Path:
    return Path(cache_dir) / domain_label / "taxonomy.json"


def store_taxonomy(doc: TaxonomyDocument, cache_dir: Path) -> Path:
    path = _taxonomy_path(cache_dir, doc.taxonomy.domain_label)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "domain_label": doc.taxonomy.domain_label,
        "source_text": doc.source_text,
        "created_at": doc.created_at,
        "provider_fingerprint": list(doc.provider_fingerprint),
        "features": [{"name": f.name, "values": list(f.values)} for f in doc.taxonomy.features],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_taxonomy(cache_dir: Path, domain_label: str) -> TaxonomyDocument | None:
    path = _taxonomy_path(cache_dir, domain_label)
    if not path.exists():
        return None
    payload = json.loads(path.read_text(encoding="utf-8"))
    features = tuple(
        Feature(name=f["name"], values=tuple(f["values"])) for f in payload["features"]
    )
    return TaxonomyDocument(
        taxonomy=Taxonomy(domain_label=payload["domain_label"], features=features),
        source_text=payload["source_text"],
        created_at=payload["created_at"],
        provider_fingerprint=tuple(payload["provider_fingerprint"]),
    )


def generate_taxonomy(
    provider: gateway.Provider,
    domain_label: str,
    cache_dir: Path | None,
    *,
    force: bool = False,
    max_output_tokens: int = 2048,
) -> TaxonomyDocument:
    """Generate (or load) the one-time taxonomy for a domain.

    Renders the generation prompt, calls the provider, parses the output
    (one automatic re-ask with a format reminder on parse failure), and
    persists the document before returning. Concurrent calls for the same
    domain are single-flight; the loser returns the winner's document.
    """
    if not domain_label:
        raise ValueError("domain_label must be non-empty")
    with _locks_guard:
        lock = _generation_locks.setdefault(domain_label, threading.Lock())
    with lock:
        if cache_dir is not None and not force:
            cached = load_taxonomy(cache_dir, domain_label)
            if cached is not None:
                return cached

        prompt = gateway.render_taxonomy_prompt(domain_label)
        request = gateway.LlmRequest(prompt=prompt, max_output_tokens=max_output_tokens)
        response = provider.complete(request)
        try:
            taxonomy = parse_taxonomy(response.text, domain_label)
        except ParseError:
            retry_prompt = f"{prompt}\n\n{_FORMAT_REMINDER}"
            response = provider.complete(
                gateway.LlmRequest(prompt=retry_prompt, max_output_tokens=max_output_tokens)
            )
            taxonomy = parse_taxonomy(response.text, domain_label)

        doc = TaxonomyDocument(
            taxonomy=taxonomy,
            source_text=response.text,
            created_at=datetime.now(timezone.utc).isoformat(),
            provider_fingerprint=(provider.model_name, gateway.template_hash("taxonomy_generation")),
        )
        if cache_dir is not None:
            store_taxonomy(doc, cache_dir)
        return doc
