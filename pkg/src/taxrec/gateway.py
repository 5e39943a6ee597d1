"""Provider-agnostic chat-completion access.

Covers prompt rendering for the three pipeline templates (plus the
taxonomy-free direct variant), an HTTP chat provider with retries and a
bounded in-flight count, and a deterministic mock provider that stands in
for a real model in tests and desk-scale experiments.
"""
from __future__ import annotations

import hashlib
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .errors import AuthError, ContentError, NetworkError
from ._textparse import split_values

_TEMPLATE_DIR = Path(__file__).parent / "templates"
_SLOT_RE = re.compile(r"\{(\w+)\}")

# Section headers used when filling the taxonomy/item/history slots. The
# mock provider relies on them to locate the embedded content.
TAXONOMY_HEADER = "Taxonomy:"
ITEM_HEADER = "Item:"
HISTORY_HEADER = "History:"

# Separator between a history item's title and its feature list.
TITLE_SEPARATOR = " — "


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt template loaded from a text asset.

    ``slots`` lists the placeholder names in order of first appearance;
    rendering with any slot missing is an error.
    """

    name: str
    text: str

    @property
    def slots(self) -> tuple[str, ...]:
        seen: list[str] = []
        for slot in _SLOT_RE.findall(self.text):
            if slot not in seen:
                seen.append(slot)
        return tuple(seen)

    @property
    def role_line(self) -> str:
        """The leading "You are a ..." sentence."""
        first = self.text.splitlines()[0]
        return first.split(". ")[0] + "."

    @property
    def task_line(self) -> str:
        """The task sentence(s) following the role sentence."""
        first = self.text.splitlines()[0]
        return first[len(self.role_line) :].strip()

    def render(self, **values: object) -> str:
        missing = [slot for slot in self.slots if slot not in values]
        if missing:
            raise ValueError(f"template {self.name!r} missing slots: {missing}")
        return self.text.format(**{slot: values[slot] for slot in self.slots})


def load_template(name: str) -> PromptTemplate:
    path = _TEMPLATE_DIR / f"{name}.txt"
    if not path.exists():
        raise FileNotFoundError(f"prompt template not found: {path}")
    return PromptTemplate(name=name, text=path.read_text(encoding="utf-8"))


def template_hash(name: str) -> str:
    """Stable fingerprint of a template asset, for cache addressing."""
    text = load_template(name).text
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def render_taxonomy_prompt(domain_label: str) -> str:
    if not domain_label:
        raise ValueError("domain_label must be non-empty")
    return load_template("taxonomy_generation").render(domain=domain_label)


def render_categorization_prompt(domain_label: str, taxonomy_text: str, item_text: str) -> str:
    for label, value in (("domain_label", domain_label), ("taxonomy_text", taxonomy_text), ("item_text", item_text)):
        if not value:
            raise ValueError(f"{label} must be non-empty")
    return load_template("categorization").render(
        domain=domain_label, taxonomy=taxonomy_text, item=item_text
    )


def render_recommendation_prompt(
    domain_label: str, taxonomy_text: str, categorized_history_text: str, k: int
) -> str:
    if k < 1:
        raise ValueError("k must be >= 1")
    for label, value in (
        ("domain_label", domain_label),
        ("taxonomy_text", taxonomy_text),
        ("categorized_history_text", categorized_history_text),
    ):
        if not value:
            raise ValueError(f"{label} must be non-empty")
    return load_template("recommendation").render(
        domain=domain_label, taxonomy=taxonomy_text, history=categorized_history_text, k=k
    )


def render_direct_recommendation_prompt(domain_label: str, history_text: str, k: int) -> str:
    """Taxonomy-free variant: raw titles in, free-text recommendation out."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not domain_label or not history_text:
        raise ValueError("domain_label and history_text must be non-empty")
    return load_template("direct_recommendation").render(
        domain=domain_label, history=history_text, k=k
    )


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    model_name: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    usage: tuple[int, int] | None = None
    provider_meta: Mapping[str, Any] = field(default_factory=dict)


class Provider(Protocol):
    """Anything that can answer a chat-completion request."""

    model_name: str

    def complete(self, request: LlmRequest) -> LlmResponse: ...


class HttpChatProvider:
    """Chat-completion over HTTP+JSON, OpenAI-wire-compatible.

    POSTs ``{model, messages, temperature, max_tokens}`` to
    ``<base_url>/chat/completions`` and reads the first choice's message
    content. Transient failures (network errors, 5xx) are retried with
    exponential backoff up to ``max_attempts``; 4xx-class failures are
    surfaced immediately. An internal semaphore caps in-flight requests.
    """

    def __init__(
        self,
        base_url: str,
        model_name: str,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        max_in_flight: int = 4,
        session: Any = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_in_flight = max_in_flight
        self._semaphore = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    @classmethod
    def from_env(cls, env: Mapping[str, str], **kwargs: Any) -> "HttpChatProvider":
        base_url = env.get("TAXREC_LLM_BASE_URL")
        if not base_url:
            raise AuthError("TAXREC_LLM_BASE_URL is not configured")
        return cls(
            base_url=base_url,
            model_name=env.get("TAXREC_LLM_MODEL", "default"),
            api_key=env.get("TAXREC_LLM_API_KEY"),
            **kwargs,
        )

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._semaphore:
            return self._complete_with_retries(request)

    def _complete_with_retries(self, request: LlmRequest) -> LlmResponse:
        import requests

        body = {
            "model": request.model_name or self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            status = response.status_code
            if status in (401, 403):
                raise AuthError(f"provider rejected credentials (HTTP {status})")
            if 400 <= status < 500:
                raise ContentError(f"provider rejected request (HTTP {status}): {response.text[:200]}")
            if status >= 500:
                last_error = NetworkError(f"provider failure (HTTP {status})")
                continue
            return self._parse_body(response)
        raise NetworkError(f"provider unreachable after {self.max_attempts} attempts: {last_error}")

    def _parse_body(self, response: Any) -> LlmResponse:
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise ContentError(f"malformed provider response: {exc}")
        usage = None
        usage_obj = data.get("usage") or {}
        if "prompt_tokens" in usage_obj and "completion_tokens" in usage_obj:
            usage = (int(usage_obj["prompt_tokens"]), int(usage_obj["completion_tokens"]))
        return LlmResponse(text=text, usage=usage, provider_meta={"model": data.get("model", self.model_name)})


class ScriptedProvider:
    """Replays a fixed sequence of responses; the last one repeats.

    A test double for exercising parsers and failure paths with exact
    output control.
    """

    def __init__(self, responses: Sequence[str], model_name: str = "scripted") -> None:
        if not responses:
            raise ValueError("at least one scripted response required")
        self.responses = list(responses)
        self.model_name = model_name
        self.calls: list[LlmRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            index = min(len(self.calls), len(self.responses) - 1)
            self.calls.append(request)
        return LlmResponse(text=self.responses[index], provider_meta={"provider": "scripted"})


# Fixed feature table for the mock provider: 10 features, 4 values each.
# Per-seed rotation of each value list keeps output deterministic per seed
# while varying across seeds.
_MOCK_FEATURES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Genre", ("Fiction", "Non-fiction", "Mystery", "Fantasy")),
    ("Theme", ("Power", "Love", "Survival", "Identity")),
    ("Tone", ("Dark", "Light", "Serious", "Humorous")),
    ("Era", ("Classic", "Modern", "Contemporary", "Ancient")),
    ("Audience", ("Adult", "Young Adult", "Children", "Scholar")),
    ("Setting", ("Urban", "Rural", "Frontier", "Imaginary")),
    ("Style", ("Narrative", "Descriptive", "Experimental", "Minimalist")),
    ("Pacing", ("Fast", "Slow", "Steady", "Varied")),
    ("Language", ("English", "French", "Spanish", "German")),
    ("Format", ("Novel", "Anthology", "Series", "Standalone")),
)


def _stable_int(*parts: object) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class MockProvider:
    """Deterministic stand-in for a chat model.

    Contract:

    * taxonomy prompts yield a fixed 10-feature taxonomy derived from the
      seed (feature names fixed, per-feature value order seed-rotated);
    * categorization prompts yield one value per feature, chosen by a
      stable hash of (seed, embedded item text, feature name) over that
      feature's value list;
    * recommendation prompts yield, per feature, the plurality value among
      the categorized history items embedded in the prompt, ties broken by
      value order in the embedded taxonomy, as ``key: value`` lines;
    * taxonomy-free recommendation prompts yield invented titles that do
      not occur in any catalog (the unconstrained-generation failure mode).

    Anything else raises :class:`ContentError`. Identical prompt text maps
    to identical response text; the instance is stateless and lock-free.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.model_name = f"mock-{seed}"

    # -- taxonomy -----------------------------------------------------

    def taxonomy_features(self) -> list[tuple[str, list[str]]]:
        """The (name, values) table this seed generates, pre-normalization."""
        features = []
        for name, values in _MOCK_FEATURES:
            shift = _stable_int(self.seed, name) % len(values)
            rotated = list(values[shift:]) + list(values[:shift])
            features.append((name, rotated))
        return features

    def _taxonomy_response(self) -> str:
        lines = ["Here is a taxonomy for this dataset:", "", "```json", "{"]
        features = self.taxonomy_features()
        for index, (name, values) in enumerate(features):
            comma = "," if index < len(features) - 1 else ""
            rendered_values = ", ".join(f'"{v}"' for v in values)
            lines.append(f'  "{name}": [{rendered_values}]{comma}')
        lines.extend(["}", "```"])
        return "\n".join(lines)

    # -- prompt dissection --------------------------------------------

    @staticmethod
    def _section(prompt: str, header: str, stop_headers: tuple[str, ...] = ()) -> str | None:
        lines = prompt.splitlines()
        try:
            start = lines.index(header) + 1
        except ValueError:
            return None
        collected: list[str] = []
        for line in lines[start:]:
            if line in stop_headers:
                break
            collected.append(line)
        text = "\n".join(collected).strip()
        return text or None

    @staticmethod
    def _parse_taxonomy_lines(taxonomy_text: str) -> list[tuple[str, list[str]]]:
        features: list[tuple[str, list[str]]] = []
        for line in taxonomy_text.splitlines():
            if ":" not in line:
                continue
            name, _, values_text = line.partition(":")
            values = split_values(values_text)
            if name.strip() and values:
                features.append((name.strip(), values))
        return features

    # -- categorization -----------------------------------------------

    def _categorization_response(self, prompt: str) -> str:
        taxonomy_text = self._section(prompt, TAXONOMY_HEADER, (ITEM_HEADER,))
        item_text = self._section(prompt, ITEM_HEADER)
        if not taxonomy_text or not item_text:
            raise ContentError("categorization prompt missing taxonomy or item section")
        lines = []
        for name, values in self._parse_taxonomy_lines(taxonomy_text):
            choice = values[_stable_int(self.seed, item_text, name) % len(values)]
            lines.append(f"{name}: {choice}")
        if not lines:
            raise ContentError("categorization prompt carried an empty taxonomy")
        return "\n".join(lines)

    # -- recommendation -----------------------------------------------

    @staticmethod
    def _history_votes(history_text: str) -> dict[str, list[str]]:
        votes: dict[str, list[str]] = {}
        for line in history_text.splitlines():
            line = line.strip()
            if not line:
                continue
            if TITLE_SEPARATOR in line:
                line = line.split(TITLE_SEPARATOR, 1)[1]
            for segment in line.split(";"):
                if ":" not in segment:
                    continue
                key, _, value = segment.partition(":")
                key, value = key.strip(), value.strip()
                if key and value:
                    votes.setdefault(key, []).append(value)
        return votes

    def _recommendation_response(self, prompt: str) -> str:
        taxonomy_text = self._section(prompt, TAXONOMY_HEADER, (HISTORY_HEADER,))
        history_text = self._section(prompt, HISTORY_HEADER)
        if not taxonomy_text or not history_text:
            raise ContentError("recommendation prompt missing taxonomy or history section")
        votes = self._history_votes(history_text)
        lines = []
        for name, values in self._parse_taxonomy_lines(taxonomy_text):
            cast = votes.get(name, [])
            if not cast:
                continue
            counts: dict[str, int] = {}
            for value in cast:
                counts[value] = counts.get(value, 0) + 1
            max_count = max(counts.values())

            def vote_order(value: str) -> tuple[int, int, str]:
                in_list = value in values
                return (0 if in_list else 1, values.index(value) if in_list else 0, value)

            tied = [value for value, count in counts.items() if count == max_count]
            lines.append(f"{name}: {min(tied, key=vote_order)}")
        if not lines:
            raise ContentError("recommendation prompt carried an unreadable history")
        return "\n".join(lines)

    def _direct_response(self, prompt: str) -> str:
        history_text = self._section(prompt, HISTORY_HEADER) or ""
        match = re.search(r"recommend (\d+)", prompt)
        k = int(match.group(1)) if match else 10
        digest = hashlib.sha256(f"{self.seed}|{history_text}".encode("utf-8")).hexdigest()[:8]
        return "\n".join(f"Uncharted Shelf Vol. {i + 1} [{digest}]" for i in range(k))

    # -- dispatch -------------------------------------------------------

    def complete(self, request: LlmRequest) -> LlmResponse:
        prompt = request.prompt
        lowered = prompt.lower()
        if "generate a taxonomy" in lowered:
            text = self._taxonomy_response()
        elif "please classify" in lowered:
            text = self._categorization_response(prompt)
        elif "please recommend" in lowered:
            if TAXONOMY_HEADER in prompt.splitlines():
                text = self._recommendation_response(prompt)
            else:
                text = self._direct_response(prompt)
        else:
            raise ContentError("mock provider does not recognize this prompt")
        usage = (len(prompt.split()), len(text.split()))
        return LlmResponse(text=text, usage=usage, provider_meta={"provider": "mock", "seed": self.seed})


def mock_provider(seed: int = 0) -> MockProvider:
    """Deterministic provider for tests and desk-scale experiments."""
    return MockProvider(seed)
