"""Service/CLI configuration with flags > environment > config file precedence."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .backends import HttpChatBackend
from .graph import DialogGraph, parse_graph
from .nlu import LexicalNlu, LlmNlu, NluAdapter, NluConfig
from .retrieval import (
    HttpEmbeddingProvider,
    LexicalEmbeddingProvider,
    RetrievalConfig,
    Retriever,
)

ENV_KEYS = {
    "LLM_ENDPOINT": "llm_endpoint",
    "LLM_API_KEY": "llm_api_key",
    "LLM_MODEL": "llm_model",
    "EMBED_ENDPOINT": "embed_endpoint",
    "EMBED_API_KEY": "embed_api_key",
}

NLU_BACKEND_KINDS = ("oracle", "http-llm")
EMBEDDING_KINDS = ("lexical", "http")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    graph_path: str = ""
    nlu_backend: str = "oracle"  # oracle (offline heuristics) | http-llm
    embedding_provider: str = "lexical"  # lexical | http
    retrieval_k: int = 15
    relevance_threshold: int = 2
    llm_endpoint: str = ""
    llm_api_key: str = ""
    llm_model: str = ""
    embed_endpoint: str = ""
    embed_api_key: str = ""
    listen_address: str = "127.0.0.1:8470"
    session_idle_timeout: float = 1800.0

    def validate(self) -> None:
        if not self.graph_path or not Path(self.graph_path).exists():
            raise ConfigError(f"graph file not found: {self.graph_path!r}")
        if self.nlu_backend not in NLU_BACKEND_KINDS:
            raise ConfigError(f"nlu_backend must be one of {NLU_BACKEND_KINDS}")
        if self.embedding_provider not in EMBEDDING_KINDS:
            raise ConfigError(f"embedding_provider must be one of {EMBEDDING_KINDS}")
        if self.retrieval_k < 1:
            raise ConfigError("retrieval_k must be >= 1")
        if self.nlu_backend == "http-llm" and not self.llm_endpoint:
            raise ConfigError("http-llm backend needs llm_endpoint (LLM_ENDPOINT)")
        if self.embedding_provider == "http" and not self.embed_endpoint:
            raise ConfigError("http embeddings need embed_endpoint (EMBED_ENDPOINT)")


def load_config(
    config_path: str | None = None,
    overrides: dict[str, object] | None = None,
    env: dict[str, str] | None = None,
) -> ServiceConfig:
    """Precedence: explicit overrides (CLI flags) > env vars > config file."""
    env = os.environ if env is None else env
    config = ServiceConfig()
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path!r}: {exc}") from exc
        known = {f.name for f in fields(ServiceConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config = replace(config, **raw)
    env_values = {
        attr: env[key] for key, attr in ENV_KEYS.items() if env.get(key)
    }
    if env_values:
        config = replace(config, **env_values)
    if overrides:
        config = replace(
            config, **{k: v for k, v in overrides.items() if v is not None}
        )
    return config


@dataclass
class RuntimeStack:
    """Concrete collaborators assembled from a ServiceConfig."""

    graph: DialogGraph
    retriever: Retriever
    nlu: NluAdapter
    config: ServiceConfig = field(repr=False, default=None)  # type: ignore[assignment]


def build_stack(config: ServiceConfig) -> RuntimeStack:
    config.validate()
    graph = parse_graph(Path(config.graph_path).read_bytes())
    if config.embedding_provider == "http":
        provider = HttpEmbeddingProvider(config.embed_endpoint, config.embed_api_key)
    else:
        provider = LexicalEmbeddingProvider()
    retriever = Retriever(graph, provider, RetrievalConfig(k=config.retrieval_k))
    if config.nlu_backend == "http-llm":
        backend = HttpChatBackend(
            config.llm_endpoint, config.llm_api_key, config.llm_model
        )
        nlu: NluAdapter = LlmNlu(
            backend,
            retriever,
            NluConfig(
                retrieval=RetrievalConfig(k=config.retrieval_k),
                relevance_threshold=config.relevance_threshold,
            ),
        )
    else:
        nlu = LexicalNlu(retriever)
    return RuntimeStack(graph=graph, retriever=retriever, nlu=nlu, config=config)
