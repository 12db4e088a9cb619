"""Parsing of model output into typed decisions, and the composed classifiers.

Three decisions are delegated to a chat model: interaction mode (guided vs
free), intent selection at a question node, and relevance filtering of goal
candidates. Model text never reaches the user; it is parsed here, with one
retry per call and a deterministic fallback, so a misbehaving model degrades
the dialog instead of breaking it.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .backends import BackendError, DecodingParams, LlmBackend
from .graph import DialogGraph
from .prompts import build_filter_prompt, build_intent_prompt, build_mode_prompt
from .retrieval import LexicalEmbeddingProvider, RetrievalConfig, Retriever

logger = logging.getLogger(__name__)

_FREE_WORD_RE = re.compile(r"\b(?:yes|command|request)\b", re.IGNORECASE)
_INTEGER_RE = re.compile(r"-?\d+")
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


class ModeLabel(str, Enum):
    GUIDED = "Guided"
    FREE = "Free"


class ParseError(ValueError):
    pass


class NoIndexFoundError(ParseError):
    pass


class IndexOutOfRangeError(ParseError):
    def __init__(self, value: int, n_candidates: int):
        super().__init__(f"index {value} out of range for {n_candidates} candidates")
        self.value = value


@dataclass(frozen=True)
class RelevanceJudgment:
    key: int
    relevance: int  # 0..2
    justification: str


@dataclass(frozen=True)
class IntentDecision:
    index: int
    retried: bool = False
    degraded: bool = False


@dataclass(frozen=True)
class GoalFilterResult:
    goals: frozenset[str]
    degraded: bool = False
    judgments: tuple[RelevanceJudgment, ...] = ()


def parse_mode_output(text: str) -> ModeLabel:
    """Total parse: yes/command/request as a word means Free, else Guided."""
    if _FREE_WORD_RE.search(text.strip()):
        return ModeLabel.FREE
    return ModeLabel.GUIDED


def parse_intent_output(text: str, n_candidates: int) -> int:
    """First decimal integer in the output; must index a presented candidate."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    m = _INTEGER_RE.search(text)
    if not m:
        raise NoIndexFoundError(f"no integer in {text!r}")
    value = int(m.group(0))
    if not 0 <= value < n_candidates:
        raise IndexOutOfRangeError(value, n_candidates)
    return value


def serialize_judgments(judgments: list[RelevanceJudgment]) -> str:
    return json.dumps(
        [
            {"key": j.key, "relevance": j.relevance, "justification": j.justification}
            for j in judgments
        ],
        ensure_ascii=False,
    )


def parse_filter_output(text: str) -> list[RelevanceJudgment]:
    """Extract the first JSON list of judgments, tolerating prose and fences.

    Malformed entries are dropped (logged with a count); raises ParseError
    when no structured list can be found at all.
    """
    candidates = [text]
    candidates.extend(m.group(1) for m in _FENCE_RE.finditer(text))
    for blob in candidates:
        items = _first_json_list(blob)
        if items is not None:
            return _judgments_from_items(items)
    raise ParseError("no structured judgment list in model output")


def _first_json_list(text: str) -> list[object] | None:
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value
    return None


def _judgments_from_items(items: list[object]) -> list[RelevanceJudgment]:
    judgments: list[RelevanceJudgment] = []
    dropped = 0
    for item in items:
        parsed = _judgment_from_item(item)
        if parsed is None:
            dropped += 1
        else:
            judgments.append(parsed)
    if dropped:
        logger.warning("dropped %d malformed judgment entries", dropped)
    return judgments


def _judgment_from_item(item: object) -> RelevanceJudgment | None:
    if not isinstance(item, dict):
        return None
    key = _as_int(item.get("key"))
    relevance = _as_int(item.get("relevance"))
    if key is None or relevance is None or relevance not in (0, 1, 2):
        return None
    justification = item.get("justification")
    if not isinstance(justification, str):
        justification = ""
    return RelevanceJudgment(key, relevance, justification)


def _as_int(value: object) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
        return int(value.strip())
    return None


def _complete_with_retry(
    backend: LlmBackend, messages: list, params: DecodingParams
) -> str:
    try:
        return backend.complete(messages, params)
    except BackendError as exc:
        logger.warning("backend failed, retrying once: %s", exc)
        return backend.complete(messages, params)


def classify_mode(
    utterance: str,
    backend: LlmBackend,
    params: DecodingParams | None = None,
) -> ModeLabel:
    messages = build_mode_prompt(utterance)
    text = _complete_with_retry(backend, messages, params or DecodingParams())
    return parse_mode_output(text)


def classify_intent(
    utterance: str,
    candidates: list[str],
    backend: LlmBackend,
    params: DecodingParams | None = None,
) -> IntentDecision:
    """Pick the candidate index; one retry on parse failure, then a lexical
    fallback (most similar candidate, ties to the first) flagged as degraded.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    messages = build_intent_prompt(utterance, candidates)
    params = params or DecodingParams()
    retried = False
    for attempt in range(2):
        text = _complete_with_retry(backend, messages, params)
        try:
            index = parse_intent_output(text, len(candidates))
        except ParseError as exc:
            logger.warning("intent parse failed (attempt %d): %s", attempt + 1, exc)
            retried = True
            continue
        return IntentDecision(index, retried=retried)
    return IntentDecision(lexical_best_match(utterance, candidates), retried=True, degraded=True)


def lexical_best_match(utterance: str, candidates: list[str]) -> int:
    provider = LexicalEmbeddingProvider()
    query = provider.embed(utterance)
    scores = provider.embed_many(list(candidates)) @ query
    return int(np.argmax(scores))  # argmax takes the first index on ties


@dataclass(frozen=True)
class NluConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    relevance_threshold: int = 2  # keep judgments with relevance >= this
    decoding: DecodingParams = field(default_factory=DecodingParams)


def filter_goal_candidates(
    utterance: str,
    graph: DialogGraph,
    retriever: Retriever,
    backend: LlmBackend,
    config: NluConfig | None = None,
) -> GoalFilterResult:
    """Pre-filter top-k, let the model judge relevance, keep the confident ones.

    A second parse failure yields an empty, degraded result (the policy then
    falls back to guided behavior instead of inventing goals).
    """
    config = config or NluConfig()
    candidates = retriever.prefilter(utterance)
    if not candidates:
        return GoalFilterResult(frozenset(), degraded=False)
    facts = [graph.nodes[c.node_id].text for c in candidates]
    messages = build_filter_prompt(utterance, facts)
    judgments: list[RelevanceJudgment] | None = None
    for attempt in range(2):
        text = _complete_with_retry(backend, messages, config.decoding)
        try:
            judgments = parse_filter_output(text)
            break
        except ParseError as exc:
            logger.warning("filter parse failed (attempt %d): %s", attempt + 1, exc)
    if judgments is None:
        return GoalFilterResult(frozenset(), degraded=True)
    kept = frozenset(
        candidates[j.key].node_id
        for j in judgments
        if j.relevance >= config.relevance_threshold and 0 <= j.key < len(candidates)
    )
    return GoalFilterResult(kept, degraded=False, judgments=tuple(judgments))


class NluAdapter:
    """Interface the dialog engine programs against.

    classify_mode is called once per dialog on the first user utterance;
    classify_intent at question nodes; filter_goals once per planning step.
    """

    def classify_mode(self, utterance: str) -> ModeLabel:
        raise NotImplementedError

    def classify_intent(self, utterance: str, candidates: list[str]) -> IntentDecision:
        raise NotImplementedError

    def filter_goals(self, utterance: str, graph: DialogGraph) -> GoalFilterResult:
        raise NotImplementedError


class LlmNlu(NluAdapter):
    """All three decisions delegated to one chat backend."""

    def __init__(
        self,
        backend: LlmBackend,
        retriever: Retriever,
        config: NluConfig | None = None,
    ):
        self.backend = backend
        self.retriever = retriever
        self.config = config or NluConfig()

    def classify_mode(self, utterance: str) -> ModeLabel:
        return classify_mode(utterance, self.backend, self.config.decoding)

    def classify_intent(self, utterance: str, candidates: list[str]) -> IntentDecision:
        return classify_intent(utterance, candidates, self.backend, self.config.decoding)

    def filter_goals(self, utterance: str, graph: DialogGraph) -> GoalFilterResult:
        return filter_goal_candidates(
            utterance, graph, self.retriever, self.backend, self.config
        )


_QUESTION_OPENER_RE = re.compile(
    r"^(?:who|what|when|where|why|how|which|can|could|do|does|did|is|are|am|will"
    r"|would|should|may|must|tell|show|give|explain)\b",
    re.IGNORECASE,
)


class LexicalNlu(NluAdapter):
    """Deterministic offline adapter for demos and the terminal chat.

    Mode via a question heuristic, intent via lexical similarity, goals via
    the pre-filter alone (top hits at or above a score floor). No model calls.
    """

    def __init__(self, retriever: Retriever, score_floor: float = 0.25, max_goals: int = 3):
        self.retriever = retriever
        self.score_floor = score_floor
        self.max_goals = max_goals

    def classify_mode(self, utterance: str) -> ModeLabel:
        stripped = utterance.strip()
        if "?" in stripped or _QUESTION_OPENER_RE.match(stripped):
            return ModeLabel.FREE
        return ModeLabel.GUIDED

    def classify_intent(self, utterance: str, candidates: list[str]) -> IntentDecision:
        return IntentDecision(lexical_best_match(utterance, candidates))

    def filter_goals(self, utterance: str, graph: DialogGraph) -> GoalFilterResult:
        scored = self.retriever.prefilter(utterance)
        kept = [c.node_id for c in scored if c.score >= self.score_floor]
        return GoalFilterResult(frozenset(kept[: self.max_goals]))
