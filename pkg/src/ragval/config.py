"""Run configuration: schema-validated settings file, seed expansion, config digests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .gateway import CHAT, EMBEDDING, ModelEndpoint
from .ingest import BUILTIN_TOKENIZER, EXTERNAL_TOKENIZER, ChunkingConfig


def derive_seed(seed: int, purpose: str) -> int:
    """Expand the top-level seed into an independent per-purpose seed."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def config_digest(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require_keys(section: str, data: dict, known: set[str]) -> None:
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in {section}: {unknown}")


_ENDPOINT_KEYS = {"model_name", "kind", "base_url", "api_key_env", "transport", "mock_script"}
_CORPUS_KEYS = {"paths", "max_chunk_tokens", "overlap_tokens", "tokenizer", "tokenizer_command"}
_THRESHOLD_KEYS = {"answerability_min", "faithfulness_min", "relevance_min"}
_OPTIMIZER_KEYS = {"breadth", "depth", "trials", "few_shot_k", "proposer_temperature"}
_GENERATION_KEYS = {
    "user_persona",
    "sme_persona",
    "temperature",
    "attempt_budget_factor",
    "relevance_n",
}
_TOP_KEYS = {
    "seed",
    "cache_dir",
    "output_dir",
    "corpus",
    "endpoints",
    "thresholds",
    "generation",
    "optimizer",
    "k_retrieve",
    "k_values",
}
_ENDPOINT_ROLES = {"embedder", "generator", "judge", "proposer"}


def _endpoint_from_dict(role: str, data: dict) -> ModelEndpoint:
    if not isinstance(data, dict):
        raise ConfigurationError(f"endpoint {role!r} must be an object")
    _require_keys(f"endpoints.{role}", data, _ENDPOINT_KEYS)
    if "model_name" not in data:
        raise ConfigurationError(f"endpoints.{role} needs model_name")
    default_kind = EMBEDDING if role == "embedder" else CHAT
    return ModelEndpoint(
        model_name=data["model_name"],
        kind=data.get("kind", default_kind),
        base_url=data.get("base_url", ""),
        api_key_env=data.get("api_key_env", ""),
        transport=data.get("transport", "http"),
        mock_script=data.get("mock_script"),
    )


@dataclass
class RunConfig:
    """Validated settings for a run; every CLI command reads one of these."""

    seed: int = 0
    cache_dir: str = ".ragval-cache"
    output_dir: str = "ragval-out"
    corpus_paths: tuple[str, ...] = ()
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    endpoints: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    generation: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    k_retrieve: int = 10
    k_values: tuple[int, ...] = tuple(range(1, 11))
    raw: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.k_retrieve < 1:
            raise ConfigurationError("k_retrieve must be >= 1")
        if any(k < 1 for k in self.k_values):
            raise ConfigurationError("k_values must all be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be an object")
        _require_keys("config", data, _TOP_KEYS)

        corpus = data.get("corpus", {})
        _require_keys("corpus", corpus, _CORPUS_KEYS)
        tokenizer = corpus.get("tokenizer", "builtin")
        if tokenizer == "builtin":
            spec, command = BUILTIN_TOKENIZER, None
        elif tokenizer == "external":
            spec, command = EXTERNAL_TOKENIZER, corpus.get("tokenizer_command")
        else:
            raise ConfigurationError(f"corpus.tokenizer must be 'builtin' or 'external', got {tokenizer!r}")
        chunking = ChunkingConfig(
            max_chunk_tokens=corpus.get("max_chunk_tokens", 800),
            overlap_tokens=corpus.get("overlap_tokens", 400),
            tokenizer_spec=spec,
            tokenizer_command=command,
        )

        endpoints_raw = data.get("endpoints", {})
        if not isinstance(endpoints_raw, dict):
            raise ConfigurationError("endpoints must be an object")
        _require_keys("endpoints", endpoints_raw, _ENDPOINT_ROLES)
        endpoints = {
            role: _endpoint_from_dict(role, spec_dict)
            for role, spec_dict in endpoints_raw.items()
        }

        thresholds = data.get("thresholds", {})
        _require_keys("thresholds", thresholds, _THRESHOLD_KEYS)
        generation = data.get("generation", {})
        _require_keys("generation", generation, _GENERATION_KEYS)
        optimizer = data.get("optimizer", {})
        _require_keys("optimizer", optimizer, _OPTIMIZER_KEYS)

        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigurationError("seed must be an integer")

        return cls(
            seed=seed,
            cache_dir=data.get("cache_dir", ".ragval-cache"),
            output_dir=data.get("output_dir", "ragval-out"),
            corpus_paths=tuple(corpus.get("paths", ())),
            chunking=chunking,
            endpoints=endpoints,
            thresholds=dict(thresholds),
            generation=dict(generation),
            optimizer=dict(optimizer),
            k_retrieve=data.get("k_retrieve", 10),
            k_values=tuple(data.get("k_values", range(1, 11))),
            raw=data,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_dict(data)

    def endpoint(self, role: str) -> ModelEndpoint:
        if role not in self.endpoints:
            raise ConfigurationError(f"config defines no {role!r} endpoint")
        return self.endpoints[role]

    def digest(self) -> str:
        return config_digest(self.raw)
