"""Semantic backends: a deterministic rule-table mock and a chat-completion HTTP client."""
from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Mapping, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

API_KEY_ENV = "SOARL_API_KEY"
MOCK_RULES_VERSION = 1


class AnnotatorError(RuntimeError):
    pass


class Timeout(AnnotatorError):
    pass


class HttpError(AnnotatorError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ParseFailure(AnnotatorError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class AnnotatorUnavailable(AnnotatorError):
    pass


# -- semantic labels --------------------------------------------------------

_LABEL_ARG = r"[A-Za-z0-9_+\-]+"
_LABEL_RE = re.compile(
    rf"([A-Za-z_][A-Za-z0-9_]*)\s*\(\s*({_LABEL_ARG}(?:\s*,\s*{_LABEL_ARG})*)\s*\)"
)


@dataclass(frozen=True, order=True)
class SemanticLabel:
    predicate: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        pred = self.predicate.strip().lower()
        args = tuple(a.strip().lower() for a in self.args)
        if not re.fullmatch(r"[a-z_][a-z0-9_]*", pred):
            raise ValueError(f"invalid label predicate {self.predicate!r}")
        for a in args:
            if not re.fullmatch(r"[a-z0-9_+\-]+", a):
                raise ValueError(f"invalid label argument {a!r}")
        object.__setattr__(self, "predicate", pred)
        object.__setattr__(self, "args", args)

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.args)})"

    @classmethod
    def parse(cls, text: str) -> "SemanticLabel":
        return parse_label(text)


def parse_label(raw: str) -> SemanticLabel:
    """Extract the first ``predicate(arg, ...)`` occurrence from ``raw``."""
    m = _LABEL_RE.search(raw or "")
    if not m:
        raise ParseFailure("no predicate-argument label found", raw or "")
    args = tuple(a.strip() for a in m.group(2).split(","))
    return SemanticLabel(m.group(1), args)


def canonical(label: SemanticLabel | str) -> SemanticLabel:
    if isinstance(label, str):
        return parse_label(label)
    return SemanticLabel(label.predicate, label.args)


# -- entities ---------------------------------------------------------------

_ARTICLES = {"a", "an", "the", "any", "all", "some"}
_PLURAL_SUFFIXES = ("es", "s")
_SPLIT = re.compile(r"[,;\n]|\band\b|\bor\b", re.IGNORECASE)


def fold_plural(word: str, known) -> str:
    w = word.lower()
    if w in known:
        return w
    for suf in _PLURAL_SUFFIXES:
        if w.endswith(suf) and w[: -len(suf)] in known:
            return w[: -len(suf)]
    return w


def parse_entities(raw: str, registry) -> list[str]:
    """Registry entity names mentioned in ``raw``, in order of first appearance."""
    known = set(registry.names()) if hasattr(registry, "names") else {k.lower() for k in registry}
    text = raw or ""
    if ":" in text.split("\n", 1)[0]:
        text = text.split(":", 1)[1]
    out: list[str] = []
    for item in _SPLIT.split(text):
        words = re.findall(r"[A-Za-z]+", item)
        words = [w for w in words if w.lower() not in _ARTICLES]
        if not words:
            continue
        hits = [fold_plural(w, known) for w in words]
        hits = [h for h in hits if h in known]
        if not hits:
            if item.strip().lower() not in ("none", "no entities"):
                log.warning("dropping unknown entity %r", item.strip())
            continue
        for h in hits:
            if h not in out:
                out.append(h)
    return out


# -- requests and backends --------------------------------------------------

class RequestKind(str, Enum):
    LABEL_TRANSITION = "label_transition"
    EXTRACT_ENTITIES = "extract_entities"


@dataclass(frozen=True)
class AnnotatorRequest:
    kind: RequestKind
    prompt: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", RequestKind(self.kind))
        if not self.prompt or not self.prompt.strip():
            raise ValueError("annotator prompt must be non-empty")


@dataclass(frozen=True)
class AnnotatorResponse:
    raw: str
    parsed: Any = None


def load_template(name: str) -> str:
    return resources.files("soarl.data.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **values: Any) -> str:
    def sub(m):
        key = m.group(1).strip()
        if key not in values:
            raise KeyError(f"template placeholder {key!r} has no value")
        return str(values[key])

    return re.sub(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}", sub, template)


def _parse_state_line(prompt: str, header: str) -> frozenset[str]:
    m = re.search(rf"^{re.escape(header)}:\s*\{{(.*)\}}\s*$", prompt, re.MULTILINE)
    if not m:
        raise ParseFailure(f"prompt has no {header!r} line", prompt)
    return frozenset(p.strip() for p in m.group(1).split(",") if p.strip())


class MockBackend:
    """Rule-table backend. Responses depend only on the request prompt."""

    name = "mock"

    def __init__(self, rules: Mapping[str, Any] | None = None):
        if rules is None:
            rules = json.loads(resources.files("soarl.data").joinpath("mock_rules.json").read_text("utf-8"))
        if rules.get("version") != MOCK_RULES_VERSION:
            raise ValueError(f"unsupported mock rule table version {rules.get('version')!r}")
        self.labels = {
            (frozenset(r["added"]), frozenset(r["removed"])): r["label"] for r in rules["labels"]
        }
        self.entities: dict[str, str] = {}
        for name, phrases in rules["entities"].items():
            for p in phrases:
                self.entities[p.lower()] = name

    def complete(self, request: AnnotatorRequest) -> AnnotatorResponse:
        if request.kind == RequestKind.LABEL_TRANSITION:
            before = _parse_state_line(request.prompt, "Current state")
            after = _parse_state_line(request.prompt, "Next state")
            raw = self.labels.get((after - before, before - after), "no matching label")
            try:
                return AnnotatorResponse(raw, parse_label(raw))
            except ParseFailure:
                return AnnotatorResponse(raw, None)
        m = re.search(r"^Constraint:\s*(.*)$", request.prompt, re.MULTILINE)
        text = m.group(1) if m else request.prompt
        found: list[str] = []
        for w in re.findall(r"[A-Za-z]+", text):
            name = self.entities.get(w.lower())
            if name and name not in found:
                found.append(name)
        raw = ", ".join(found) if found else "none"
        return AnnotatorResponse(raw, found)


class FlakyBackend:
    """Wraps a backend and corrupts a seeded fraction of label responses (fault injection)."""

    name = "flaky"

    def __init__(self, inner, rate: float, seed: int = 0, garbage: str = "go left maybe"):
        self.inner = inner
        self.rate = rate
        self.garbage = garbage
        self._rng = np.random.default_rng(seed)
        self.injected = 0
        self.requests = 0

    def complete(self, request: AnnotatorRequest) -> AnnotatorResponse:
        if request.kind == RequestKind.LABEL_TRANSITION:
            self.requests += 1
            if self._rng.random() < self.rate:
                self.injected += 1
                return AnnotatorResponse(self.garbage, None)
        return self.inner.complete(request)


class HttpBackend:
    """Minimal chat-completion client: ``{model, messages, temperature}`` in,
    ``choices[0].message.content`` out."""

    name = "http"

    def __init__(self, endpoint: str, model: str = "gpt-4o-mini", timeout: float = 10.0,
                 max_retries: int = 2, api_key: Optional[str] = None, backoff: float = 0.0):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.backoff = backoff

    def payload(self, request: AnnotatorRequest) -> dict:
        return {
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": "You are a precise semantic annotator. Answer tersely."},
                {"role": "user", "content": request.prompt},
            ],
        }

    def complete(self, request: AnnotatorRequest) -> AnnotatorResponse:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(self.endpoint, json=self.payload(request), headers=headers,
                                  timeout=self.timeout)
            except httpx.TimeoutException as e:
                last = Timeout(f"request timed out after {self.timeout}s ({e.__class__.__name__})")
            except httpx.HTTPError as e:
                last = HttpError(f"transport error: {e}")
            else:
                if resp.status_code >= 400:
                    last = HttpError(f"HTTP {resp.status_code}", resp.status_code)
                    if resp.status_code < 500:
                        break
                else:
                    return self._parse(request, resp.text)
            if self.backoff and attempt < self.max_retries:
                time.sleep(self.backoff * (2 ** attempt))
        assert last is not None
        raise last

    def _parse(self, request: AnnotatorRequest, body: str) -> AnnotatorResponse:
        try:
            raw = json.loads(body)["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ParseFailure("malformed chat-completion response", body) from None
        if request.kind == RequestKind.LABEL_TRANSITION:
            try:
                return AnnotatorResponse(raw, parse_label(raw))
            except ParseFailure:
                return AnnotatorResponse(raw, None)
        return AnnotatorResponse(raw, None)


def complete(backend, request: AnnotatorRequest) -> AnnotatorResponse:
    return backend.complete(request)


def make_backend(kind: str = "mock", endpoint: str | None = None, model: str | None = None,
                 timeout: float = 10.0, max_retries: int = 2, fault_rate: float = 0.0, seed: int = 0):
    if kind == "mock":
        backend = MockBackend()
    elif kind == "http":
        if not endpoint:
            raise ValueError("annotator.endpoint is required for the http backend")
        backend = HttpBackend(endpoint, model or "gpt-4o-mini", timeout, max_retries)
    else:
        raise ValueError(f"unknown annotator backend {kind!r}")
    if fault_rate > 0:
        backend = FlakyBackend(backend, fault_rate, seed)
    return backend


def extract_request(constraint_text: str, entity_names: Sequence[str], metadata=None) -> AnnotatorRequest:
    prompt = render(load_template("extract_entities"), constraint=constraint_text,
                    entities=", ".join(entity_names))
    return AnnotatorRequest(RequestKind.EXTRACT_ENTITIES, prompt, metadata or {})
