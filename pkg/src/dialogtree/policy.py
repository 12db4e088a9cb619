"""Per-session dialog state machine over a shared immutable graph.

The engine walks the authored graph node by node. Every user-visible string
is an authored node text (with template placeholders filled), so the system
cannot say anything the domain expert did not write. In guided mode each
visited node is presented; in free mode the engine plans the longest path
prefix shared by all goal candidates, traverses it silently, and surfaces
only decision points and answers.
"""

from __future__ import annotations

import json
import logging
import re
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .graph import (
    PLACEHOLDER_RE,
    Beliefstate,
    CoercionError,
    DialogGraph,
    DialogNode,
    MissingVariableError,
    NodeType,
    coerce_value,
    evaluate_condition,
    fill_template,
    parse_condition,
)
from .nlu import ModeLabel, NluAdapter
from .planning import (
    PlanConfig,
    Path,
    VariableSourceNotFoundError,
    find_variable_source,
    longest_shared_prefix,
)

logger = logging.getLogger(__name__)


class ActionKind(str, Enum):
    ASK = "ASK"
    SKIP = "SKIP"


@dataclass(frozen=True)
class SystemAction:
    kind: ActionKind
    node: str
    rendered_text: str = ""  # ASK only; SKIPs carry no user-visible text
    suggestions: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class UserTurn:
    """Marker dropped into the action log for every user input."""

    text: str


@dataclass
class PendingVariable:
    name: str
    source: str  # variable node that declares the value
    resume_at: str
    resume_kind: str  # template | logic | variable_node
    attempts: int = 0


@dataclass
class DialogState:
    current: str
    mode: ModeLabel | None = None  # effective mode (may fall back to Guided)
    predicted_mode: ModeLabel | None = None  # classifier output, fixed per dialog
    goals: set[str] = field(default_factory=set)
    prefix: Path | None = None
    beliefstate: Beliefstate = field(default_factory=dict)
    history: list[str] = field(default_factory=list)
    pending_variable: PendingVariable | None = None
    action_log: list[SystemAction | UserTurn] = field(default_factory=list)
    done: bool = False
    degraded_events: list[str] = field(default_factory=list)

    @property
    def awaiting(self) -> str:
        if self.done:
            return "none"
        if self.pending_variable is not None:
            return "variable"
        return "intent"


class SessionDoneError(RuntimeError):
    pass


class PendingVariableMismatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    plan: PlanConfig = field(default_factory=PlanConfig)
    max_turn_actions: int = 256  # safety cap per user turn


_AWAIT = object()
_DEAD_END = object()


class DialogEngine:
    """Drives one or more DialogStates over a shared graph.

    The engine itself is stateless between calls; a DialogState is owned by
    exactly one session and must not be mutated concurrently.
    """

    def __init__(self, graph: DialogGraph, nlu: NluAdapter, config: EngineConfig | None = None):
        self.graph = graph
        self.nlu = nlu
        self.config = config or EngineConfig()

    # -- session lifecycle -------------------------------------------------

    def start_session(self) -> tuple[DialogState, SystemAction]:
        state = DialogState(current=self.graph.start, history=[self.graph.start])
        action = self._ask_action(state, self.graph.start)
        state.action_log.append(action)
        return state, action

    def handle_user_input(self, state: DialogState, utterance: str) -> list[SystemAction]:
        if state.done:
            raise SessionDoneError("dialog is finished")
        state.action_log.append(UserTurn(utterance))
        if state.pending_variable is not None:
            return self._accept_variable(state, state.pending_variable.name, utterance)

        actions: list[SystemAction] = []
        if state.mode is None:
            self._first_turn(state, utterance, actions)
        elif state.mode == ModeLabel.FREE:
            self._free_intent_turn(state, utterance, actions)
        else:
            self._guided_intent_turn(state, utterance, actions)
        state.action_log.extend(actions)
        return actions

    def provide_variable(self, state: DialogState, name: str, raw_value: str) -> list[SystemAction]:
        if state.done:
            raise SessionDoneError("dialog is finished")
        state.action_log.append(UserTurn(raw_value))
        return self._accept_variable(state, name, raw_value)

    # -- turn handlers -----------------------------------------------------

    def _first_turn(self, state: DialogState, utterance: str, actions: list[SystemAction]) -> None:
        mode = self.nlu.classify_mode(utterance)
        state.predicted_mode = mode
        state.mode = mode
        if mode == ModeLabel.GUIDED:
            self._guided_intent_turn(state, utterance, actions)
            return
        result = self.nlu.filter_goals(utterance, self.graph)
        if result.degraded:
            self._degrade(state, "nlu_filter_degraded")
        goals = set(result.goals)
        reachable = {g for g in goals if self._reachable(state.current, g)}
        if goals - reachable:
            logger.info("dropping unreachable goal candidates: %s", sorted(goals - reachable))
        if not reachable:
            self._degrade(state, "planning_failed_fallback_guided")
            state.mode = ModeLabel.GUIDED
            self._guided_intent_turn(state, utterance, actions)
            return
        state.goals = reachable
        self._free_walk(state, actions, entry=None)

    def _free_intent_turn(self, state: DialogState, utterance: str, actions: list[SystemAction]) -> None:
        node = self.graph.nodes[state.current]
        if not node.answers:
            # nothing to clarify here; treat as exhausted
            state.done = True
            return
        decision = self.nlu.classify_intent(utterance, [a.intent_text for a in node.answers])
        if decision.degraded:
            self._degrade(state, "nlu_intent_degraded")
        target = node.answers[decision.index].target
        self._free_walk(state, actions, entry=target)

    def _guided_intent_turn(self, state: DialogState, utterance: str, actions: list[SystemAction]) -> None:
        node = self.graph.nodes[state.current]
        if node.node_type in (NodeType.START, NodeType.QUESTION):
            decision = self.nlu.classify_intent(utterance, [a.intent_text for a in node.answers])
            if decision.degraded:
                self._degrade(state, "nlu_intent_degraded")
            target = node.answers[decision.index].target
            self._guided_walk(state, actions, target)
        elif node.successors():
            self._guided_walk(state, actions, node.successors()[0])
        else:
            state.done = True

    # -- free-mode planning walk --------------------------------------------

    def _free_walk(self, state: DialogState, actions: list[SystemAction], entry: str | None) -> None:
        while True:
            if len(actions) > self.config.max_turn_actions:
                self._degrade(state, "engine_turn_cap")
                state.done = True
                return
            origin = entry if entry is not None else state.current
            reachable = {g for g in state.goals if self._reachable(origin, g)}
            dropped = state.goals - reachable
            if dropped:
                logger.info("dropping goals unreachable from %r: %s", origin, sorted(dropped))
                state.goals = reachable
            if not state.goals:
                # nothing answerable is left; keep the dialog alive in guided mode
                self._degrade(state, "planning_failed_fallback_guided")
                state.mode = ModeLabel.GUIDED
                if entry is not None:
                    self._guided_walk(state, actions, entry)
                else:
                    self._guided_continue(state, actions)
                return
            state.prefix = longest_shared_prefix(self.graph, origin, state.goals, self.config.plan)
            outcome, entry = self._walk_prefix(state, actions, state.prefix, from_entry=entry is not None)
            if outcome in ("await", "done"):
                return
            # outcome == "replan": loop with the new entry (or from current)

    def _walk_prefix(
        self,
        state: DialogState,
        actions: list[SystemAction],
        prefix: Path,
        from_entry: bool,
    ) -> tuple[str, str | None]:
        """Returns (outcome, replan_entry). Outcome: await | done | replan."""
        i = 0 if from_entry else 1
        if i >= len(prefix):
            # plan cannot extend past the current node: re-present it
            return self._present_free_tail(state, actions, prefix[-1], moved=False)
        while i < len(prefix):
            node_id = prefix[i]
            node = self.graph.nodes[node_id]
            is_tail = i == len(prefix) - 1
            if node.node_type == NodeType.LOGIC:
                self._move(state, node_id)
                actions.append(SystemAction(ActionKind.SKIP, node_id))
                resolved = self._resolve_logic(state, node, actions)
                if resolved is _AWAIT:
                    return "await", None
                if resolved is _DEAD_END:
                    state.done = True
                    return "done", None
                if not is_tail and resolved == prefix[i + 1]:
                    i += 1
                    continue
                return "replan", resolved  # plan diverged or ended at the logic node
            if not is_tail:
                self._move(state, node_id)
                actions.append(SystemAction(ActionKind.SKIP, node_id))
                i += 1
                continue
            return self._present_free_tail(state, actions, node_id, moved=True)
        return "replan", None

    def _present_free_tail(
        self,
        state: DialogState,
        actions: list[SystemAction],
        node_id: str,
        moved: bool,
    ) -> tuple[str, str | None]:
        node = self.graph.nodes[node_id]
        if moved:
            self._move(state, node_id)
        status = self._try_ask(state, node_id, actions)
        if status == "pending":
            return "await", None
        if node_id in state.goals:
            state.goals.discard(node_id)
            if not state.goals:
                state.done = True
                return "done", None
            if node.node_type in (NodeType.START, NodeType.QUESTION):
                return "await", None  # clarifying intent decides the remaining goals
            if node.node_type == NodeType.VARIABLE:
                self._await_variable_node(state, node)
                return "await", None
            return "replan", None
        if node.node_type in (NodeType.START, NodeType.QUESTION):
            return "await", None  # decision point
        if node.node_type == NodeType.VARIABLE:
            self._await_variable_node(state, node)
            return "await", None
        if not node.successors():
            state.done = True
            return "done", None
        return "replan", None  # truncated plan; try again from here

    # -- guided walk ---------------------------------------------------------

    def _guided_walk(self, state: DialogState, actions: list[SystemAction], entry: str) -> None:
        node_id: str | None = entry
        while node_id is not None:
            if len(actions) > self.config.max_turn_actions:
                self._degrade(state, "engine_turn_cap")
                state.done = True
                return
            node = self.graph.nodes[node_id]
            if node.node_type == NodeType.LOGIC:
                self._move(state, node_id)
                actions.append(SystemAction(ActionKind.SKIP, node_id))
                resolved = self._resolve_logic(state, node, actions)
                if resolved is _AWAIT:
                    return
                if resolved is _DEAD_END:
                    state.done = True
                    return
                node_id = resolved  # type: ignore[assignment]
                continue
            self._move(state, node_id)
            if self._try_ask(state, node_id, actions) == "pending":
                return
            if node.node_type in (NodeType.START, NodeType.QUESTION):
                return  # await the user's intent
            if node.node_type == NodeType.VARIABLE:
                self._await_variable_node(state, node)
                return
            if node.next is None:
                state.done = True
                return
            node_id = node.next

    def _guided_continue(self, state: DialogState, actions: list[SystemAction]) -> None:
        node = self.graph.nodes[state.current]
        if node.node_type in (NodeType.START, NodeType.QUESTION):
            return  # the node was already presented; wait for an intent
        if node.successors():
            self._guided_walk(state, actions, node.successors()[0])
        else:
            state.done = True

    # -- variables and logic --------------------------------------------------

    def _accept_variable(self, state: DialogState, name: str, raw_value: str) -> list[SystemAction]:
        pending = state.pending_variable
        if pending is None or pending.name != name:
            raise PendingVariableMismatchError(
                f"no pending variable named {name!r} "
                f"(pending: {pending.name if pending else None!r})"
            )
        actions: list[SystemAction] = []
        decl = self.graph.nodes[pending.source].variable
        assert decl is not None
        try:
            value = coerce_value(decl.value_kind, raw_value)
        except CoercionError:
            pending.attempts += 1
            if pending.attempts <= 1:
                actions.append(self._ask_action(state, pending.source, flags=("reask",)))
                state.action_log.extend(actions)
                return actions
            self._degrade(state, "variable_coercion_degraded")
            value = raw_value
        state.beliefstate[name] = value
        state.pending_variable = None
        self._resume_after_variable(state, pending, actions)
        state.action_log.extend(actions)
        return actions

    def _resume_after_variable(
        self, state: DialogState, pending: PendingVariable, actions: list[SystemAction]
    ) -> None:
        resume = self.graph.nodes[pending.resume_at]
        if pending.resume_kind == "template":
            # the template node is the current node again; present it now
            if state.mode == ModeLabel.FREE:
                outcome, entry = self._present_free_tail(state, actions, pending.resume_at, moved=False)
                if outcome == "replan":
                    self._free_walk(state, actions, entry)
            else:
                self._guided_present_current(state, actions)
        elif pending.resume_kind == "logic":
            resolved = self._resolve_logic(state, resume, actions)
            if resolved is _AWAIT:
                return
            if resolved is _DEAD_END:
                state.done = True
                return
            if state.mode == ModeLabel.FREE:
                self._free_walk(state, actions, entry=resolved)  # type: ignore[arg-type]
            else:
                self._guided_walk(state, actions, resolved)  # type: ignore[arg-type]
        else:  # variable_node
            next_id = resume.next
            if next_id is None:
                state.done = True
                return
            if state.mode == ModeLabel.FREE:
                self._free_walk(state, actions, entry=next_id)
            else:
                self._guided_walk(state, actions, next_id)

    def _guided_present_current(self, state: DialogState, actions: list[SystemAction]) -> None:
        node = self.graph.nodes[state.current]
        if self._try_ask(state, state.current, actions) == "pending":
            return
        if node.node_type in (NodeType.START, NodeType.QUESTION):
            return
        if node.node_type == NodeType.VARIABLE:
            self._await_variable_node(state, node)
            return
        if node.next is None:
            state.done = True
        else:
            self._guided_walk(state, actions, node.next)

    def _await_variable_node(self, state: DialogState, node: DialogNode) -> None:
        assert node.variable is not None
        state.pending_variable = PendingVariable(
            name=node.variable.name,
            source=node.id,
            resume_at=node.id,
            resume_kind="variable_node",
        )

    def _resolve_logic(self, state: DialogState, node: DialogNode, actions: list[SystemAction]):
        """Returns the branch target, _AWAIT (variable requested) or _DEAD_END."""
        assert node.variable is not None
        name = node.variable.name
        if name not in state.beliefstate:
            if self._request_variable(state, name, resume_at=node.id, resume_kind="logic", actions=actions):
                return _AWAIT
            self._degrade(state, "logic_variable_unsourced")
            default = next((b for b in node.branches if b.is_default), None)
            return default.target if default is not None else _DEAD_END
        default_target: str | None = None
        for branch in node.branches:
            condition = parse_condition(branch.condition)
            if condition is None:
                default_target = branch.target
                continue
            if evaluate_condition(condition, state.beliefstate):
                return branch.target
        if default_target is not None:
            return default_target
        self._degrade(state, "logic_no_branch_matched")
        return _DEAD_END

    def _request_variable(
        self,
        state: DialogState,
        name: str,
        resume_at: str,
        resume_kind: str,
        actions: list[SystemAction],
    ) -> bool:
        try:
            source = find_variable_source(state.history, self.graph, name)
        except VariableSourceNotFoundError:
            return False
        state.pending_variable = PendingVariable(name, source, resume_at, resume_kind)
        actions.append(self._ask_action(state, source))
        return True

    # -- primitives ------------------------------------------------------------

    def _move(self, state: DialogState, node_id: str) -> None:
        state.history.append(node_id)
        state.current = node_id

    def _try_ask(self, state: DialogState, node_id: str, actions: list[SystemAction]) -> str:
        """Emit the ASK for node_id, or request a missing template variable.

        Returns "ok" or "pending". Falls back to the raw authored text
        (flagged) when no visited variable node can supply the value.
        """
        node = self.graph.nodes[node_id]
        try:
            actions.append(self._ask_action(state, node_id))
            return "ok"
        except MissingVariableError as exc:
            if self._request_variable(
                state, exc.name, resume_at=node_id, resume_kind="template", actions=actions
            ):
                return "pending"
            self._degrade(state, "unfilled_template")
            actions.append(
                SystemAction(
                    ActionKind.ASK,
                    node_id,
                    node.text,
                    tuple(a.intent_text for a in node.answers),
                    flags=("unfilled_template",),
                )
            )
            return "ok"

    def _ask_action(self, state: DialogState, node_id: str, flags: tuple[str, ...] = ()) -> SystemAction:
        node = self.graph.nodes[node_id]
        text = fill_template(node.text, state.beliefstate)
        return SystemAction(
            ActionKind.ASK,
            node_id,
            text,
            tuple(a.intent_text for a in node.answers),
            flags=flags,
        )

    def _degrade(self, state: DialogState, event: str) -> None:
        logger.info("degraded: %s", event)
        state.degraded_events.append(event)

    def _reachable(self, origin: str, goal: str) -> bool:
        if origin == goal:
            return True
        seen = {origin}
        queue = deque([origin])
        while queue:
            for succ in self.graph.successors(queue.popleft()):
                if succ == goal:
                    return True
                if succ not in seen:
                    seen.add(succ)
                    queue.append(succ)
        return False


def dialog_length(action_log: Iterable[SystemAction | UserTurn]) -> int:
    """Turns perceived by the user: ASK actions plus user inputs; SKIPs free."""
    count = 0
    for entry in action_log:
        if isinstance(entry, UserTurn):
            count += 1
        elif entry.kind == ActionKind.ASK:
            count += 1
    return count


# -- transcripts ----------------------------------------------------------------


def transcript_records(
    log: Iterable[SystemAction | UserTurn],
    session: str = "",
    timestamp: float | None = None,
) -> list[dict[str, object]]:
    """Line-delimited record form of an action log (JSON-serializable)."""
    ts = timestamp if timestamp is not None else time.time()
    records: list[dict[str, object]] = []
    for entry in log:
        if isinstance(entry, UserTurn):
            records.append(
                {"ts": ts, "session": session, "kind": "USER", "text": entry.text}
            )
        else:
            records.append(
                {
                    "ts": ts,
                    "session": session,
                    "kind": entry.kind.value,
                    "node": entry.node,
                    "text": entry.rendered_text,
                    "flags": list(entry.flags),
                }
            )
    return records


def write_transcript(path: str, records: Iterable[dict[str, object]]) -> None:
    with open(path, "a", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_transcript(path: str) -> list[dict[str, object]]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def matches_authored_text(rendered: str, authored: str) -> bool:
    """Whether rendered text is the authored text with placeholders filled."""
    if rendered == authored:
        return True
    pattern = ""
    last = 0
    for m in PLACEHOLDER_RE.finditer(authored):
        pattern += re.escape(authored[last : m.start()]) + ".+?"
        last = m.end()
    pattern += re.escape(authored[last:])
    return re.fullmatch(pattern, rendered, re.DOTALL) is not None


def audit_ask_actions(
    graph: DialogGraph, log: Iterable[SystemAction | UserTurn]
) -> list[str]:
    """Controllability audit: every ASK must render an authored node text."""
    violations = []
    for entry in log:
        if isinstance(entry, UserTurn) or entry.kind != ActionKind.ASK:
            continue
        node = graph.nodes.get(entry.node)
        if node is None:
            violations.append(f"ASK of unknown node {entry.node!r}")
        elif not matches_authored_text(entry.rendered_text, node.text):
            violations.append(
                f"ASK text for {entry.node!r} does not match the authored text: "
                f"{entry.rendered_text!r}"
            )
    return violations
