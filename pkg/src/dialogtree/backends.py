"""Chat-completion backends: a remote HTTP client and scripted test doubles.

Backends never return silently-empty strings; every failure surfaces as a
BackendError so callers can apply their retry policy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

from .prompts import ChatMessage

logger = logging.getLogger(__name__)


class BackendError(Exception):
    """Chat backend failure (network, HTTP status, empty completion)."""


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0  # greedy where the backend permits
    max_tokens: int = 512


class LlmBackend(Protocol):
    def complete(
        self, messages: list[ChatMessage], params: DecodingParams | None = None
    ) -> str: ...


class HttpChatBackend:
    """OpenAI-compatible chat-completions endpoint."""

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        model: str = "",
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def complete(
        self, messages: list[ChatMessage], params: DecodingParams | None = None
    ) -> str:
        import httpx

        params = params or DecodingParams()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.text} for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        try:
            response = httpx.post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except Exception as exc:
            raise BackendError(f"chat completion failed: {exc}") from exc
        if not text or not text.strip():
            raise BackendError("chat completion returned empty text")
        return text


class ScriptedBackend:
    """Deterministic test double.

    Looks up the last user message in `mapping`; otherwise pops from the
    `replies` queue. A reply equal to RAISE simulates a backend failure.
    """

    RAISE = "<raise>"

    def __init__(
        self,
        mapping: dict[str, str] | None = None,
        replies: list[str] | None = None,
    ):
        self.mapping = mapping or {}
        self.replies = list(replies or [])
        self.calls: list[list[ChatMessage]] = []

    def complete(
        self, messages: list[ChatMessage], params: DecodingParams | None = None
    ) -> str:
        self.calls.append(list(messages))
        user_text = next((m.text for m in reversed(messages) if m.role == "user"), "")
        if user_text in self.mapping:
            reply = self.mapping[user_text]
        elif self.replies:
            reply = self.replies.pop(0)
        else:
            raise BackendError(f"no scripted reply for {user_text!r}")
        if reply == self.RAISE:
            raise BackendError("scripted failure")
        return reply
