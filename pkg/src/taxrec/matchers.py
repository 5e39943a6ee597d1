"""Free-text matching of model output against item titles.

These back the ablation that skips feature parsing and maps the raw
recommendation text onto the pool by text similarity: smoothed sentence
BLEU, ROUGE-L F1, embedding cosine, and exact normalized-substring lookup.
"""
from __future__ import annotations

import math
import threading
from collections import Counter
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from .core import normalize_text
from .errors import ContentError, NetworkError, TaxRecError

MATCHER_METHODS = ("taxonomy", "bleu", "rouge", "embedding", "exact_title")

# Methods usable when no parsed feature set exists (taxonomy disabled).
FREEFORM_METHODS = ("bleu", "rouge", "embedding", "exact_title")


def tokenize(text: str) -> list[str]:
    return normalize_text(text).split()


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_score(candidate: str, reference: str, max_order: int = 4) -> float:
    """Smoothed sentence-level BLEU of ``candidate`` against ``reference``.

    Uniform weights over orders 1..min(max_order, |candidate|); zero
    precisions are smoothed by adding 0.1 to the numerator, so identical
    strings score exactly 1.0 at any length.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    order = min(max_order, len(cand))
    log_sum = 0.0
    for n in range(1, order + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        clipped = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = max(1, len(cand) - n + 1)
        if clipped == 0:
            precision = 0.1 / total
        else:
            precision = clipped / total
        log_sum += math.log(precision)
    geometric_mean = math.exp(log_sum / order)
    if len(cand) >= len(ref):
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - len(ref) / len(cand))
    return brevity_penalty * geometric_mean


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l_f1(candidate: str, reference: str) -> float:
    """ROUGE-L F1 (longest common subsequence over word tokens)."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def exact_title_score(title: str, text: str) -> float:
    """1.0 if the normalized title occurs as a substring of the normalized text."""
    needle = normalize_text(title)
    if not needle:
        return 0.0
    return 1.0 if needle in normalize_text(text) else 0.0


class Embedder(Protocol):
    """Maps texts to fixed-width vectors."""

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class HttpEmbedder:
    """Embeddings over HTTP+JSON: POST ``{model, input}`` to ``<base>/embeddings``.

    Responses follow the usual ``{"data": [{"embedding": [...]}]}`` shape.
    Vectors are memoized per input text.
    """

    def __init__(
        self,
        base_url: str,
        model_name: str = "default",
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        session: Any = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._cache: dict[str, list[float]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_env(cls, env: Mapping[str, str], **kwargs: Any) -> "HttpEmbedder":
        base_url = env.get("TAXREC_EMBED_BASE_URL")
        if not base_url:
            raise TaxRecError("TAXREC_EMBED_BASE_URL is not configured")
        return cls(base_url=base_url, **kwargs)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        with self._lock:
            missing = [t for t in texts if t not in self._cache]
        if missing:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            import requests

            try:
                response = self._session.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model_name, "input": list(missing)},
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                raise NetworkError(f"embedder unreachable: {exc}")
            if response.status_code != 200:
                raise ContentError(f"embedder failure (HTTP {response.status_code})")
            try:
                vectors = [row["embedding"] for row in response.json()["data"]]
            except Exception as exc:
                raise ContentError(f"malformed embedder response: {exc}")
            if len(vectors) != len(missing):
                raise ContentError("embedder returned wrong number of vectors")
            with self._lock:
                self._cache.update(zip(missing, vectors))
        with self._lock:
            return [list(self._cache[t]) for t in texts]


class HashEmbedder:
    """Deterministic token-hash embeddings, for tests and offline runs.

    Not semantic: each token maps to a pseudo-random unit direction, and a
    text embeds to the normalized sum of its token vectors. Shared tokens
    yield similarity; nothing more is claimed.
    """

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        self.dim = dim
        self.seed = seed

    def _token_vector(self, token: str) -> np.ndarray:
        import hashlib

        digest = hashlib.sha256(f"{self.seed}|{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vector = rng.standard_normal(self.dim)
        return vector / np.linalg.norm(vector)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            tokens = tokenize(text)
            if not tokens:
                vectors.append([0.0] * self.dim)
                continue
            total = np.sum([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(total)
            if norm > 0:
                total = total / norm
            vectors.append(total.tolist())
        return vectors


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def score_titles_against_text(
    titles: Mapping[str, str],
    text: str,
    method: str,
    embedder: Embedder | None = None,
) -> list[tuple[str, float]]:
    """Score every (item id, title) against free text with the given method.

    Returns one (id, score) per item in input order; ranking and tie-breaks
    happen downstream.
    """
    if method not in FREEFORM_METHODS:
        raise ValueError(f"unknown free-text matcher {method!r}; expected one of {FREEFORM_METHODS}")
    if method == "embedding":
        if embedder is None:
            raise TaxRecError("embedding matcher requires a configured embedder")
        ids = list(titles)
        vectors = embedder.embed([titles[i] for i in ids] + [text])
        text_vector = vectors[-1]
        return [(item_id, cosine_similarity(vec, text_vector)) for item_id, vec in zip(ids, vectors)]
    if method == "bleu":
        return [(item_id, bleu_score(title, text)) for item_id, title in titles.items()]
    if method == "rouge":
        return [(item_id, rouge_l_f1(title, text)) for item_id, title in titles.items()]
    return [(item_id, exact_title_score(title, text)) for item_id, title in titles.items()]
