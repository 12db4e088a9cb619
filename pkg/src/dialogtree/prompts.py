"""Prompt construction for the three chat-model decisions.

The templates are fixed; for fixed inputs the built messages are
byte-identical across runs (pinned by golden-file tests). The in-context
example block for the candidate filter lives in a versioned asset so domain
authors can extend it without touching code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

FILTER_EXAMPLES_ASSET = "filter_examples_v1.txt"

PROMPT_KINDS = ("mode", "intent", "filter")


class MissingInputError(ValueError):
    def __init__(self, field: str):
        super().__init__(f"missing prompt input: {field}")
        self.field = field


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user"
    text: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise ValueError(f"bad role: {self.role!r}")
        if not self.text:
            raise ValueError("message text must be non-empty")


def load_filter_examples() -> str:
    """The in-context example block embedded in the filter prompt."""
    ref = resources.files("dialogtree").joinpath("assets", FILTER_EXAMPLES_ASSET)
    return ref.read_text(encoding="utf-8")


def build_mode_prompt(utterance: str) -> list[ChatMessage]:
    return [
        ChatMessage("system", 'Answer with "yes" or "no" only.'),
        ChatMessage(
            "user",
            f"Is the following text a question / command / requesting or not: {utterance}?",
        ),
    ]


def _keyed_json_lines(items: list[dict[str, object]]) -> str:
    """JSON list serialized one entry per line (the layout the examples use)."""
    lines = [json.dumps(item, ensure_ascii=False) for item in items]
    return "[" + ",\n".join(lines) + "]"


def build_intent_prompt(utterance: str, candidates: list[str]) -> list[ChatMessage]:
    if not candidates:
        raise MissingInputError("candidates")
    serialized = _keyed_json_lines(
        [{"key": i, "response": text} for i, text in enumerate(candidates)]
    )
    system = (
        "Given this list of possible response candidates:\n"
        f"{serialized}\n"
        "Decide which of the response candidate texts most closely matches the "
        "user intent, and only output the responses index. Do not output any "
        "other text, any code, or anything else."
    )
    return [ChatMessage("system", system), ChatMessage("user", utterance)]


def build_filter_prompt(utterance: str, facts: list[str]) -> list[ChatMessage]:
    if not facts:
        raise MissingInputError("facts")
    serialized = _keyed_json_lines(
        [{"key": i, "fact": text} for i, text in enumerate(facts)]
    )
    system = (
        "You will be provided with a json list of facts and a query.\n"
        "You are to act as a first filter to decide which of the given facts "
        "answer the query or are relevant to answering the query, at least "
        "partially, and which ones are not relevant to answering the query at all?\n"
        "Assign each fact a relevance indicator between 0 and 2, and add a "
        "justification of why it is relevant (2), partially related (1), or "
        "irrelevant (0).\n"
        "Facts are also considered relevant if they imply the answer.\n"
        "If facts contain placeholders inside curly braces, assume the "
        "placeholder will be filled with a reasonable value.\n"
        "Don't return anything besides the json list of relevant facts, and "
        "only return facts with relevance indicator higher than 0. Don't "
        "return code or additional text.\n"
        "\n"
        "REMEMBER: even if some facts are only slightly relevant to answering "
        "the query, it is better to rate them with a relevance of 1 than to "
        "have all facts have relevance 0.\n"
        "\n"
        f"{load_filter_examples()}\n"
        "\n"
        "Note that the fact with key 4 was excluded from the output, as it has "
        "a relevance of 0: Fact 4 is not related to the query about the "
        "weather in Singapore."
    )
    user = (
        "======= Facts =======\n"
        f"{serialized}\n"
        "======= Query =======\n"
        f"{utterance}"
    )
    return [ChatMessage("system", system), ChatMessage("user", user)]


def build_prompt(kind: str, **inputs: object) -> list[ChatMessage]:
    """Dispatching front door; raises MissingInputError on incomplete inputs."""
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind: {kind!r}")
    if "utterance" not in inputs:
        raise MissingInputError("utterance")
    utterance = str(inputs["utterance"])
    if kind == "mode":
        return build_mode_prompt(utterance)
    if kind == "intent":
        if "candidates" not in inputs:
            raise MissingInputError("candidates")
        return build_intent_prompt(utterance, list(inputs["candidates"]))  # type: ignore[arg-type]
    if "facts" not in inputs:
        raise MissingInputError("facts")
    return build_filter_prompt(utterance, list(inputs["facts"]))  # type: ignore[arg-type]
