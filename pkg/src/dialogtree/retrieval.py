"""Embedding-based pre-filter over dialog-graph nodes.

A cheap similarity ranking cuts the candidate pool handed to the (slow,
expensive) reasoning post-filter down to a constant k, decoupling its cost
from graph size. Node texts are embedded with placeholders left intact; the
post-filter prompt tells the model to assume placeholders get filled.
"""

from __future__ import annotations

import logging
import re
import threading
import zlib
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .graph import DialogGraph, NodeType

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

LEXICAL_DIMENSION = 512


class ProviderError(Exception):
    """Embedding backend failure, with the underlying cause attached."""


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: list[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class ScoredCandidate:
    node_id: str
    score: float
    rank: int  # 1-based


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 15
    candidate_node_types: frozenset[NodeType] = frozenset(
        {NodeType.INFORMATION, NodeType.QUESTION}
    )

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


class LexicalEmbeddingProvider:
    """Deterministic offline provider: hash-bucketed term frequencies.

    Tokens are case-folded alphanumeric runs, hashed (crc32, stable across
    processes) into a fixed number of buckets; the vector is L2-normalized,
    so dot product equals cosine similarity.
    """

    def __init__(self, dimension: int = LEXICAL_DIMENSION):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            vec[zlib.crc32(token.encode("utf-8")) % self.dimension] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def embed_many(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension), dtype=np.float64)
        return np.stack([self.embed(t) for t in texts])


def lexical_embed(text: str, dimension: int = LEXICAL_DIMENSION) -> np.ndarray:
    """One-shot lexical embedding (module-level convenience)."""
    return LexicalEmbeddingProvider(dimension).embed(text)


class HttpEmbeddingProvider:
    """Remote embedding endpoint: POST a text list, get vectors back."""

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "",
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.dimension = -1  # discovered from the first response

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: list[str]) -> np.ndarray:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload: dict[str, object] = {"input": texts}
        if self.model:
            payload["model"] = self.model
        try:
            response = httpx.post(
                f"{self.endpoint}/embeddings",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            data = response.json()
            vectors = [row["embedding"] for row in data["data"]]
        except Exception as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(texts):
            raise ProviderError(f"embedding response has shape {matrix.shape}")
        self.dimension = matrix.shape[1]
        return matrix


@dataclass
class Retriever:
    """Caches node embeddings for one (graph, provider) pair.

    The index is built once under a lock; afterwards reads are lock-free,
    so concurrent sessions can share one Retriever.
    """

    graph: DialogGraph
    provider: EmbeddingProvider
    config: RetrievalConfig = field(default_factory=RetrievalConfig)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _node_ids: list[str] | None = field(default=None, repr=False)
    _matrix: np.ndarray | None = field(default=None, repr=False)

    def candidate_ids(self) -> list[str]:
        return [
            node.id
            for node in self.graph.nodes.values()
            if node.node_type in self.config.candidate_node_types and node.text.strip()
        ]

    def _ensure_index(self) -> tuple[list[str], np.ndarray]:
        if self._matrix is not None and self._node_ids is not None:
            return self._node_ids, self._matrix
        with self._lock:
            if self._matrix is None:
                node_ids = self.candidate_ids()
                texts = [self.graph.nodes[nid].text for nid in node_ids]
                try:
                    matrix = self.provider.embed_many(texts)
                except ProviderError:
                    raise
                except Exception as exc:
                    raise ProviderError(f"embedding provider failed: {exc}") from exc
                self._node_ids = node_ids
                self._matrix = matrix
        return self._node_ids, self._matrix  # type: ignore[return-value]

    def prefilter(self, query: str) -> list[ScoredCandidate]:
        """Top-k candidates by dot-product similarity to the query."""
        if not query:
            raise ValueError("query must be non-empty")
        node_ids, matrix = self._ensure_index()
        if not node_ids:
            return []
        try:
            query_vec = self.provider.embed(query)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(f"embedding provider failed: {exc}") from exc
        scores = matrix @ query_vec
        order = sorted(range(len(node_ids)), key=lambda i: (-scores[i], node_ids[i]))
        top = order[: self.config.k]
        logger.info(
            "prefilter k=%d: %d/%d candidates kept for query %r",
            self.config.k,
            len(top),
            len(node_ids),
            query[:80],
        )
        return [
            ScoredCandidate(node_ids[i], float(scores[i]), rank)
            for rank, i in enumerate(top, start=1)
        ]


def prefilter(
    query: str,
    graph: DialogGraph,
    provider: EmbeddingProvider,
    config: RetrievalConfig | None = None,
) -> list[ScoredCandidate]:
    """One-shot pre-filter; build a Retriever directly to reuse the cache."""
    return Retriever(graph, provider, config or RetrievalConfig()).prefilter(query)
