"""Single choke-point for chat-completion and embedding traffic.

All model calls go through a Gateway, which layers a content-addressed
response cache, bounded retries with exponential backoff, and an in-flight
request limit over a transport. Two transports exist: an OpenAI-compatible
HTTP transport and a scripted mock transport that lets every pipeline run
offline and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import requests

from .errors import ConfigurationError, ProtocolError, TransportError

log = logging.getLogger(__name__)

CHAT = "chat"
EMBEDDING = "embedding"


@dataclass(frozen=True)
class ModelEndpoint:
    model_name: str
    kind: str  # "chat" | "embedding"
    base_url: str = ""
    api_key_env: str = ""
    transport: str = "http"  # "http" | "mock"
    mock_script: Any = None  # MockScript instance or path to a script file

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ConfigurationError("model_name must be non-empty")
        if self.kind not in (CHAT, EMBEDDING):
            raise ConfigurationError(f"unknown endpoint kind: {self.kind!r}")
        if self.transport not in ("http", "mock"):
            raise ConfigurationError(f"unknown transport: {self.transport!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_name: str
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float = 0.0
    max_output_tokens: int = 1024
    seed: int | None = None
    is_judge: bool = False

    @classmethod
    def build(
        cls,
        endpoint: ModelEndpoint,
        content: str,
        *,
        temperature: float = 0.0,
        max_output_tokens: int = 1024,
        seed: int | None = None,
        is_judge: bool = False,
    ) -> "ChatRequest":
        return cls(
            model_name=endpoint.model_name,
            messages=(("user", content),),
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            seed=seed,
            is_judge=is_judge,
        )

    def message_dicts(self) -> list[dict[str, str]]:
        return [{"role": role, "content": content} for role, content in self.messages]


@dataclass
class TranscriptRecord:
    request_hash: str
    response_text: str
    latency_ms: int
    usage: dict
    cache_hit: bool
    attempts: int


class _Transient(Exception):
    """Retryable transport failure (connection error, 429/5xx)."""

    def __init__(self, status: int | None, message: str = ""):
        super().__init__(message or f"transient failure (status={status})")
        self.status = status


def canonical_request(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_digest(payload: dict) -> str:
    return hashlib.sha256(canonical_request(payload).encode("utf-8")).hexdigest()


class ResponseCache:
    """On-disk cache: one digest-named JSON file per response."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        path = self._path(digest)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return None

    def put(self, digest: str, payload: dict) -> None:
        tmp = self._path(digest).with_suffix(".tmp")
        with self._write_lock:
            tmp.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8")
            tmp.replace(self._path(digest))


# --- transports --------------------------------------------------------------


class HttpTransport:
    """OpenAI-compatible /chat/completions and /embeddings over HTTP."""

    def __init__(self, timeout: float = 60.0):
        self.timeout = timeout
        self._session = requests.Session()

    def _headers(self, endpoint: ModelEndpoint) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env)
            if not key:
                raise ConfigurationError(f"API key env var {endpoint.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, endpoint: ModelEndpoint, path: str, body: dict) -> dict:
        url = endpoint.base_url.rstrip("/") + path
        try:
            resp = self._session.post(url, json=body, headers=self._headers(endpoint), timeout=self.timeout)
        except requests.RequestException as exc:
            raise _Transient(None, f"connection failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Transient(resp.status_code)
        if resp.status_code >= 400:
            raise TransportError(
                f"HTTP {resp.status_code} from {url}: {resp.text[:200]}",
                last_status=resp.status_code,
                attempts=1,
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response body from {url}") from exc

    def chat(self, endpoint: ModelEndpoint, req: ChatRequest) -> tuple[str, dict]:
        body: dict[str, Any] = {
            "model": req.model_name,
            "messages": req.message_dicts(),
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        data = self._post(endpoint, "/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat completion body: {str(data)[:200]}") from exc
        if not isinstance(text, str):
            raise ProtocolError("chat completion content is not a string")
        return text, data.get("usage") or {}

    def embed(self, endpoint: ModelEndpoint, texts: list[str]) -> list[list[float]]:
        data = self._post(endpoint, "/embeddings", {"model": endpoint.model_name, "input": texts})
        try:
            items = sorted(data["data"], key=lambda item: item["index"])
            vectors = [[float(x) for x in item["embedding"]] for item in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embeddings body: {str(data)[:200]}") from exc
        if len(vectors) != len(texts):
            raise ProtocolError(f"embedding count mismatch: sent {len(texts)}, got {len(vectors)}")
        return vectors


@dataclass
class MockRule:
    kind: str = CHAT
    match: str | list[str] = ""
    response: str = ""
    vector: list[float] | None = None
    fail_times: int = 0
    max_uses: int | None = None
    uses: int = field(default=0, compare=False)

    def matches(self, text: str) -> bool:
        if self.max_uses is not None and self.uses >= self.max_uses:
            return False
        needles = [self.match] if isinstance(self.match, str) else list(self.match)
        return all(needle in text for needle in needles)


@dataclass
class MockScript:
    """Ordered request-matcher -> response script driving the mock transport."""

    rules: list[MockRule] = field(default_factory=list)
    default_chat_response: str | None = None
    embedding_dim: int = 8

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [MockRule(**rule) for rule in obj.get("rules", [])]
        return cls(
            rules=rules,
            default_chat_response=obj.get("default_chat_response"),
            embedding_dim=obj.get("embedding_dim", 8),
        )


def hash_embedding(model_name: str, text: str, dim: int) -> list[float]:
    """Deterministic pseudo-random unit vector for a (model, text) pair."""
    seed = int.from_bytes(hashlib.sha256(f"{model_name}\x00{text}".encode("utf-8")).digest()[:8], "big")
    rng = random.Random(seed)
    vec = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    norm = sum(x * x for x in vec) ** 0.5 or 1.0
    return [x / norm for x in vec]


class MockTransport:
    """Offline transport driven by a MockScript. Thread-safe."""

    def __init__(self, script: MockScript):
        self.script = script
        self._lock = threading.Lock()

    def _pick(self, kind: str, text: str) -> MockRule | None:
        for rule in self.script.rules:
            if rule.kind == kind and rule.matches(text):
                return rule
        return None

    def chat(self, endpoint: ModelEndpoint, req: ChatRequest) -> tuple[str, dict]:
        text = "\n".join(content for _, content in req.messages)
        with self._lock:
            rule = self._pick(CHAT, text)
            if rule is None:
                if self.script.default_chat_response is not None:
                    response = self.script.default_chat_response
                else:
                    raise ProtocolError(f"no mock rule matches chat request: {text[:120]!r}")
            else:
                if rule.fail_times > 0:
                    rule.fail_times -= 1
                    raise _Transient(503, "scripted failure")
                rule.uses += 1
                response = rule.response
        usage = {
            "prompt_tokens": len(text.split()),
            "completion_tokens": len(response.split()),
        }
        usage["total_tokens"] = usage["prompt_tokens"] + usage["completion_tokens"]
        return response, usage

    def embed(self, endpoint: ModelEndpoint, texts: list[str]) -> list[list[float]]:
        vectors: list[list[float]] = []
        with self._lock:
            for text in texts:
                rule = self._pick(EMBEDDING, text)
                if rule is not None and rule.vector is not None:
                    rule.uses += 1
                    vectors.append([float(x) for x in rule.vector])
                else:
                    vectors.append(hash_embedding(endpoint.model_name, text, self.script.embedding_dim))
        return vectors


# --- gateway ------------------------------------------------------------------


class Gateway:
    """Shared entry point for all model traffic.

    Retries transient failures with exponential backoff (max_attempts total),
    caches responses content-addressed on the canonicalized request, and
    bounds concurrent in-flight requests.
    """

    def __init__(
        self,
        cache_dir: str | Path | None = None,
        *,
        max_attempts: int = 5,
        backoff_base: float = 0.5,
        max_in_flight: int = 16,
        sleep=time.sleep,
        http_timeout: float = 60.0,
    ):
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self._http = HttpTransport(timeout=http_timeout)
        self._mocks: dict[int, MockTransport] = {}
        self._mock_files: dict[str, MockTransport] = {}
        self._in_flight = threading.BoundedSemaphore(max_in_flight)
        self._stats_lock = threading.Lock()
        self.cache_hits = 0
        self.cache_misses = 0

    def _transport(self, endpoint: ModelEndpoint):
        if endpoint.transport == "mock":
            script = endpoint.mock_script
            if isinstance(script, MockScript):
                key = id(script)
                if key not in self._mocks:
                    self._mocks[key] = MockTransport(script)
                return self._mocks[key]
            if isinstance(script, (str, Path)):
                key_s = str(script)
                if key_s not in self._mock_files:
                    self._mock_files[key_s] = MockTransport(MockScript.from_file(script))
                return self._mock_files[key_s]
            raise ConfigurationError("mock endpoint needs a MockScript or a script file path")
        return self._http

    def _count(self, hit: bool) -> None:
        with self._stats_lock:
            if hit:
                self.cache_hits += 1
            else:
                self.cache_misses += 1

    def cache_stats(self) -> dict[str, int]:
        return {"hits": self.cache_hits, "misses": self.cache_misses}

    def _with_retries(self, call, description: str):
        last_status: int | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._in_flight:
                    return call(), attempt
            except _Transient as exc:
                last_status = exc.status
                log.debug("attempt %d/%d failed for %s: %s", attempt, self.max_attempts, description, exc)
                if attempt < self.max_attempts:
                    self.sleep(self.backoff_base * (2 ** (attempt - 1)))
        raise TransportError(
            f"exhausted {self.max_attempts} attempts for {description}",
            last_status=last_status,
            attempts=self.max_attempts,
        )

    def chat_complete(
        self, endpoint: ModelEndpoint, req: ChatRequest, *, refresh: bool = False
    ) -> tuple[str, TranscriptRecord]:
        if endpoint.kind != CHAT:
            raise ConfigurationError(f"chat_complete needs a chat endpoint, got kind={endpoint.kind!r}")
        if req.is_judge and req.temperature != 0:
            raise ConfigurationError("judge requests must carry temperature 0")
        payload = {
            "kind": CHAT,
            "model": req.model_name,
            "messages": req.message_dicts(),
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
            "seed": req.seed,
        }
        digest = request_digest(payload)
        if self.cache is not None and not refresh:
            cached = self.cache.get(digest)
            if cached is not None:
                self._count(hit=True)
                return cached["response"], TranscriptRecord(
                    request_hash=digest,
                    response_text=cached["response"],
                    latency_ms=0,
                    usage=cached.get("usage", {}),
                    cache_hit=True,
                    attempts=0,
                )
        self._count(hit=False)
        transport = self._transport(endpoint)
        started = time.monotonic()
        (text, usage), attempts = self._with_retries(
            lambda: transport.chat(endpoint, req), f"chat:{req.model_name}"
        )
        latency_ms = int((time.monotonic() - started) * 1000)
        if self.cache is not None:
            self.cache.put(digest, {"kind": CHAT, "response": text, "usage": usage})
        return text, TranscriptRecord(
            request_hash=digest,
            response_text=text,
            latency_ms=latency_ms,
            usage=usage,
            cache_hit=False,
            attempts=attempts,
        )

    def embed_texts(self, texts: list[str], endpoint: ModelEndpoint) -> list[list[float]]:
        if endpoint.kind != EMBEDDING:
            raise ConfigurationError(f"embed_texts needs an embedding endpoint, got kind={endpoint.kind!r}")
        if not texts:
            return []
        if any(not t for t in texts):
            raise ValueError("embed_texts requires non-empty texts")

        def key_for(text: str) -> str:
            return request_digest({"kind": EMBEDDING, "model": endpoint.model_name, "text": text})

        resolved: dict[str, list[float]] = {}
        if self.cache is not None:
            for text in dict.fromkeys(texts):
                cached = self.cache.get(key_for(text))
                if cached is not None:
                    resolved[text] = cached["vector"]
                    self._count(hit=True)
        missing = [t for t in dict.fromkeys(texts) if t not in resolved]
        if missing:
            for _ in missing:
                self._count(hit=False)
            transport = self._transport(endpoint)
            vectors, _ = self._with_retries(
                lambda: transport.embed(endpoint, missing), f"embed:{endpoint.model_name}"
            )
            for text, vector in zip(missing, vectors):
                resolved[text] = vector
                if self.cache is not None:
                    self.cache.put(key_for(text), {"kind": EMBEDDING, "vector": vector})
        out = [resolved[t] for t in texts]
        dims = {len(v) for v in out}
        if len(dims) > 1:
            raise ProtocolError(f"inconsistent embedding dimensions in batch: {sorted(dims)}")
        return out
