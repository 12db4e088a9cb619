"""Dialog-graph domain model: parsing, validation, traversal helpers, templates.

A dialog graph is authored by a domain expert as a JSON document (see
``parse_graph``). Nodes carry the only text the system is ever allowed to
show a user; edges carry user intents. A loaded graph is immutable and safe
to share across concurrent sessions.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

GRAPH_FORMAT_VERSION = 1

PLACEHOLDER_RE = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")

_CONDITION_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(==|!=|<=|>=|<|>)\s*(.+?)\s*$"
)
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class GraphError(Exception):
    """Base class for graph document errors."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations if violations is not None else [message]


class GraphSyntaxError(GraphError):
    """The document is not well-formed JSON or lacks the top-level shape."""


class SchemaError(GraphError):
    """A node violates the schema (missing field, unknown type, bad structure)."""


class DuplicateIdError(GraphError):
    """A node or answer id occurs more than once."""


class LinkError(GraphError):
    """A target/successor id does not resolve to an existing node."""


class ConditionSyntaxError(GraphError):
    """A logic-branch condition does not parse under the grammar."""


class MissingVariableError(KeyError):
    """A template placeholder has no value in the beliefstate."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class CoercionError(ValueError):
    """A raw user value does not parse as the declared value kind."""


class NodeType(str, Enum):
    START = "start"
    QUESTION = "question"
    VARIABLE = "variable"
    LOGIC = "logic"
    INFORMATION = "information"


class ValueKind(str, Enum):
    TEXT = "text"
    NUMBER = "number"
    BOOLEAN = "boolean"


# Beliefstate values: text -> str, number -> int | float, boolean -> bool.
Beliefstate = dict[str, "str | int | float | bool"]


@dataclass(frozen=True)
class VariableDecl:
    name: str
    value_kind: ValueKind


@dataclass(frozen=True)
class Answer:
    id: str
    intent_text: str
    target: str


@dataclass(frozen=True)
class LogicBranch:
    condition: str  # grammar: `VAR op literal` or the literal DEFAULT
    target: str

    @property
    def is_default(self) -> bool:
        return self.condition.strip() == "DEFAULT"


@dataclass(frozen=True)
class DialogNode:
    id: str
    node_type: NodeType
    text: str = ""
    variable: VariableDecl | None = None
    answers: tuple[Answer, ...] = ()
    branches: tuple[LogicBranch, ...] = ()
    next: str | None = None

    def successors(self) -> tuple[str, ...]:
        """Successor node ids in authored order."""
        if self.node_type in (NodeType.START, NodeType.QUESTION):
            return tuple(a.target for a in self.answers)
        if self.node_type == NodeType.LOGIC:
            return tuple(b.target for b in self.branches)
        return (self.next,) if self.next is not None else ()


@dataclass
class DialogGraph:
    """Immutable-by-convention container for the authored domain."""

    nodes: dict[str, DialogNode]
    start: str
    faq: dict[str, tuple[str, ...]] = field(default_factory=dict)
    paraphrases: dict[str, tuple[str, ...]] = field(default_factory=dict)
    name: str = ""
    version: int = GRAPH_FORMAT_VERSION
    # answer id -> (owning node id, Answer); derived, not part of equality
    _answers: dict[str, tuple[str, Answer]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not self._answers:
            for node in self.nodes.values():
                for answer in node.answers:
                    self._answers[answer.id] = (node.id, answer)

    def node(self, node_id: str) -> DialogNode:
        return self.nodes[node_id]

    def successors(self, node_id: str) -> tuple[str, ...]:
        return self.nodes[node_id].successors()

    def answer(self, answer_id: str) -> Answer:
        return self._answers[answer_id][1]

    def answer_owner(self, answer_id: str) -> str:
        return self._answers[answer_id][0]

    def faq_nodes(self) -> list[str]:
        """Node ids that carry at least one user question, in node order."""
        return [nid for nid in self.nodes if self.faq.get(nid)]

    def reachable_from_start(self) -> set[str]:
        seen = {self.start}
        queue = deque([self.start])
        while queue:
            for succ in self.nodes[queue.popleft()].successors():
                if succ not in seen:
                    seen.add(succ)
                    queue.append(succ)
        return seen


@dataclass(frozen=True)
class Condition:
    variable: str
    op: str  # one of == != < <= > >=
    literal: str | int | float | bool


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # unreachable | undeclared_variable | unsourced_logic_variable
    node_id: str
    message: str


def parse_condition(text: str) -> Condition | None:
    """Parse a branch condition; DEFAULT parses to None."""
    if text.strip() == "DEFAULT":
        return None
    m = _CONDITION_RE.match(text)
    if not m:
        raise ConditionSyntaxError(f"condition does not parse: {text!r}")
    name, op, raw = m.groups()
    return Condition(name, op, _parse_literal(raw, text))


def _parse_literal(raw: str, context: str) -> str | int | float | bool:
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in ("'", '"'):
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConditionSyntaxError(
            f"literal {raw!r} is not a quoted string, number, or boolean "
            f"(in condition {context!r})"
        ) from None


def evaluate_condition(condition: Condition, beliefstate: Beliefstate) -> bool:
    """Evaluate a parsed condition against the beliefstate.

    The tested variable must be present; callers check presence first.
    """
    value = beliefstate[condition.variable]
    lit = condition.literal
    if condition.op == "==":
        return value == lit
    if condition.op == "!=":
        return value != lit
    if not _is_number(value) or not _is_number(lit):
        raise ConditionSyntaxError(
            f"ordering comparison needs numeric operands: "
            f"{condition.variable} {condition.op} {lit!r}"
        )
    if condition.op == "<":
        return value < lit
    if condition.op == "<=":
        return value <= lit
    if condition.op == ">":
        return value > lit
    return value >= lit


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def coerce_value(kind: ValueKind, raw: str) -> str | int | float | bool:
    """Coerce a raw user-typed value to the declared value kind."""
    if kind == ValueKind.TEXT:
        return raw
    stripped = raw.strip()
    if kind == ValueKind.NUMBER:
        try:
            return int(stripped)
        except ValueError:
            pass
        try:
            return float(stripped)
        except ValueError:
            raise CoercionError(f"not a number: {raw!r}") from None
    lowered = stripped.lower()
    if lowered in ("true", "yes", "y", "1"):
        return True
    if lowered in ("false", "no", "n", "0"):
        return False
    raise CoercionError(f"not a boolean: {raw!r}")


def render_value(value: str | int | float | bool) -> str:
    """Render a beliefstate value for inclusion in user-visible text."""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def template_variables(text: str) -> list[str]:
    """Placeholder names appearing in the text, in order, deduplicated."""
    seen: list[str] = []
    for m in PLACEHOLDER_RE.finditer(text):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def fill_template(text: str, beliefstate: Beliefstate) -> str:
    """Replace every ``{{ NAME }}`` placeholder with its beliefstate value.

    Non-placeholder text is preserved byte-for-byte. Raises
    MissingVariableError for the first placeholder without a value.
    """

    def replace(m: re.Match[str]) -> str:
        name = m.group(1)
        if name not in beliefstate:
            raise MissingVariableError(name)
        return render_value(beliefstate[name])

    return PLACEHOLDER_RE.sub(replace, text)


def parse_graph(document: bytes | str) -> DialogGraph:
    """Parse and validate a dialog-graph document.

    Raises GraphSyntaxError / SchemaError / DuplicateIdError / LinkError;
    the raised error carries the full list of violations found.
    """
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphSyntaxError(f"malformed document: {exc}") from exc
    if not isinstance(data, dict):
        raise GraphSyntaxError("top level must be an object")

    version = data.get("version")
    if version != GRAPH_FORMAT_VERSION:
        raise GraphSyntaxError(
            f"unsupported or missing version: {version!r} "
            f"(expected {GRAPH_FORMAT_VERSION})"
        )
    if "start" not in data or not isinstance(data["start"], str):
        raise GraphSyntaxError("missing string field 'start'")
    if not isinstance(data.get("nodes"), list):
        raise GraphSyntaxError("missing list field 'nodes'")

    violations: list[tuple[type[GraphError], str]] = []
    nodes: dict[str, DialogNode] = {}
    answer_ids: set[str] = set()

    for i, raw in enumerate(data["nodes"]):
        try:
            node = _parse_node(raw, i, answer_ids)
        except GraphError as exc:
            violations.append((type(exc), str(exc)))
            continue
        if node.id in nodes:
            violations.append((DuplicateIdError, f"duplicate node id {node.id!r}"))
            continue
        nodes[node.id] = node

    faq = _parse_text_map(data.get("faq"), "faq", violations)
    paraphrases = _parse_text_map(data.get("paraphrases"), "paraphrases", violations)
    name = data.get("name", "")

    if not violations:
        violations.extend(
            (LinkError, msg) for msg in _link_violations(nodes, data["start"], faq, paraphrases)
        )
        starts = [n.id for n in nodes.values() if n.node_type == NodeType.START]
        if len(starts) != 1 or (starts and starts[0] != data["start"]):
            violations.append(
                (
                    SchemaError,
                    f"graph must declare exactly one start node matching 'start' "
                    f"(found {starts!r}, start={data['start']!r})",
                )
            )

    if violations:
        error_cls = violations[0][0]
        messages = [msg for _, msg in violations]
        raise error_cls("; ".join(messages), violations=messages)

    return DialogGraph(
        nodes=nodes,
        start=data["start"],
        faq=faq,
        paraphrases=paraphrases,
        name=name,
        version=version,
    )


_KNOWN_NODE_FIELDS = {"id", "type", "text", "variable", "answers", "branches", "next"}


def _parse_node(raw: object, index: int, answer_ids: set[str]) -> DialogNode:
    if not isinstance(raw, dict):
        raise SchemaError(f"node #{index} is not an object")
    node_id = raw.get("id")
    if not isinstance(node_id, str) or not node_id:
        raise SchemaError(f"node #{index} is missing a string 'id'")
    try:
        node_type = NodeType(raw.get("type"))
    except ValueError:
        raise SchemaError(
            f"node {node_id!r} has unknown type {raw.get('type')!r}"
        ) from None

    text = raw.get("text", "")
    if not isinstance(text, str):
        raise SchemaError(f"node {node_id!r}: 'text' must be a string")

    variable = None
    if raw.get("variable") is not None:
        variable = _parse_variable(raw["variable"], node_id)

    answers: list[Answer] = []
    for j, ra in enumerate(raw.get("answers") or []):
        answer = _parse_answer(ra, node_id, j)
        if answer.id in answer_ids:
            raise DuplicateIdError(f"duplicate answer id {answer.id!r}")
        answer_ids.add(answer.id)
        answers.append(answer)

    branches: list[LogicBranch] = []
    for j, rb in enumerate(raw.get("branches") or []):
        branches.append(_parse_branch(rb, node_id, j))

    next_id = raw.get("next")
    if next_id is not None and not isinstance(next_id, str):
        raise SchemaError(f"node {node_id!r}: 'next' must be a string or null")

    node = DialogNode(
        id=node_id,
        node_type=node_type,
        text=text,
        variable=variable,
        answers=tuple(answers),
        branches=tuple(branches),
        next=next_id,
    )
    _check_node_structure(node)
    return node


def _parse_variable(raw: object, node_id: str) -> VariableDecl:
    if not isinstance(raw, dict) or not isinstance(raw.get("name"), str):
        raise SchemaError(f"node {node_id!r}: 'variable' needs a string 'name'")
    if not _NAME_RE.match(raw["name"]):
        raise SchemaError(f"node {node_id!r}: bad variable name {raw['name']!r}")
    try:
        kind = ValueKind(raw.get("value_kind"))
    except ValueError:
        raise SchemaError(
            f"node {node_id!r}: unknown value_kind {raw.get('value_kind')!r}"
        ) from None
    return VariableDecl(raw["name"], kind)


def _parse_answer(raw: object, node_id: str, index: int) -> Answer:
    if not isinstance(raw, dict):
        raise SchemaError(f"node {node_id!r}: answer #{index} is not an object")
    answer_id = raw.get("id")
    intent = raw.get("intent_text")
    target = raw.get("target")
    if not isinstance(answer_id, str) or not answer_id:
        raise SchemaError(f"node {node_id!r}: answer #{index} missing 'id'")
    if not isinstance(intent, str) or not intent:
        raise SchemaError(f"node {node_id!r}: answer {answer_id!r} needs non-empty 'intent_text'")
    if not isinstance(target, str) or not target:
        raise SchemaError(f"node {node_id!r}: answer {answer_id!r} needs a 'target'")
    return Answer(answer_id, intent, target)


def _parse_branch(raw: object, node_id: str, index: int) -> LogicBranch:
    if not isinstance(raw, dict):
        raise SchemaError(f"node {node_id!r}: branch #{index} is not an object")
    condition = raw.get("condition")
    target = raw.get("target")
    if not isinstance(condition, str) or not condition:
        raise SchemaError(f"node {node_id!r}: branch #{index} needs a 'condition'")
    if not isinstance(target, str) or not target:
        raise SchemaError(f"node {node_id!r}: branch #{index} needs a 'target'")
    try:
        parse_condition(condition)
    except ConditionSyntaxError as exc:
        raise SchemaError(f"node {node_id!r}: {exc}") from None
    return LogicBranch(condition, target)


def _check_node_structure(node: DialogNode) -> None:
    t = node.node_type
    if t in (NodeType.START, NodeType.QUESTION):
        if not node.answers:
            raise SchemaError(f"{t.value} node {node.id!r} needs at least one answer")
        if node.branches or node.next is not None:
            raise SchemaError(f"{t.value} node {node.id!r} may only have answers")
    elif t in (NodeType.INFORMATION, NodeType.VARIABLE):
        if node.answers or node.branches:
            raise SchemaError(f"{t.value} node {node.id!r} may only have a 'next' successor")
        if t == NodeType.VARIABLE and node.variable is None:
            raise SchemaError(f"variable node {node.id!r} must declare its variable")
    elif t == NodeType.LOGIC:
        if not node.branches:
            raise SchemaError(f"logic node {node.id!r} needs at least one branch")
        if node.variable is None:
            raise SchemaError(f"logic node {node.id!r} must declare the variable it tests")
        if node.answers or node.next is not None:
            raise SchemaError(f"logic node {node.id!r} may only have branches")
        defaults = [b for b in node.branches if b.is_default]
        if len(defaults) > 1:
            raise SchemaError(f"logic node {node.id!r} has more than one DEFAULT branch")


def _parse_text_map(
    raw: object,
    field_name: str,
    violations: list[tuple[type[GraphError], str]],
) -> dict[str, tuple[str, ...]]:
    result: dict[str, tuple[str, ...]] = {}
    if raw is None:
        return result
    if not isinstance(raw, dict):
        violations.append((SchemaError, f"'{field_name}' must be an object"))
        return result
    for key, values in raw.items():
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            violations.append(
                (SchemaError, f"{field_name}[{key!r}] must be a list of strings")
            )
            continue
        result[key] = tuple(values)
    return result


def _link_violations(
    nodes: dict[str, DialogNode],
    start: str,
    faq: dict[str, tuple[str, ...]],
    paraphrases: dict[str, tuple[str, ...]],
) -> list[str]:
    messages: list[str] = []
    if start not in nodes:
        messages.append(f"start node {start!r} does not exist")
    answer_ids = {a.id for n in nodes.values() for a in n.answers}
    for node in nodes.values():
        for answer in node.answers:
            if answer.target not in nodes:
                messages.append(
                    f"answer {answer.id!r} targets missing node {answer.target!r}"
                )
        for branch in node.branches:
            if branch.target not in nodes:
                messages.append(
                    f"branch of {node.id!r} targets missing node {branch.target!r}"
                )
        if node.next is not None and node.next not in nodes:
            messages.append(f"node {node.id!r} 'next' targets missing node {node.next!r}")
    for key in faq:
        if key not in nodes:
            messages.append(f"faq key {key!r} does not resolve to a node")
    for key in paraphrases:
        if key not in answer_ids:
            messages.append(f"paraphrase key {key!r} does not resolve to an answer")
    return messages


def serialize_graph(graph: DialogGraph) -> str:
    """Serialize to the canonical document form (parse round-trips)."""
    nodes = []
    for node in graph.nodes.values():
        raw: dict[str, object] = {"id": node.id, "type": node.node_type.value}
        if node.text:
            raw["text"] = node.text
        if node.variable is not None:
            raw["variable"] = {
                "name": node.variable.name,
                "value_kind": node.variable.value_kind.value,
            }
        if node.answers:
            raw["answers"] = [
                {"id": a.id, "intent_text": a.intent_text, "target": a.target}
                for a in node.answers
            ]
        if node.branches:
            raw["branches"] = [
                {"condition": b.condition, "target": b.target} for b in node.branches
            ]
        if node.node_type in (NodeType.INFORMATION, NodeType.VARIABLE):
            raw["next"] = node.next
        nodes.append(raw)
    document = {
        "version": graph.version,
        "start": graph.start,
        "nodes": nodes,
        "faq": {k: list(v) for k, v in sorted(graph.faq.items())},
        "paraphrases": {k: list(v) for k, v in sorted(graph.paraphrases.items())},
    }
    if graph.name:
        document["name"] = graph.name
    return json.dumps(document, indent=2, ensure_ascii=False)


def validate_graph(graph: DialogGraph) -> list[Diagnostic]:
    """Soft diagnostics beyond the hard parse errors."""
    diagnostics: list[Diagnostic] = []
    reachable = graph.reachable_from_start()
    for nid in graph.nodes:
        if nid not in reachable:
            diagnostics.append(
                Diagnostic("unreachable", nid, f"node {nid!r} is unreachable from start")
            )

    declared = {
        n.variable.name for n in graph.nodes.values() if n.variable is not None
    }
    for node in graph.nodes.values():
        for name in template_variables(node.text):
            if name not in declared:
                diagnostics.append(
                    Diagnostic(
                        "undeclared_variable",
                        node.id,
                        f"template in {node.id!r} references undeclared variable {name!r}",
                    )
                )

    predecessors: dict[str, set[str]] = {nid: set() for nid in graph.nodes}
    for node in graph.nodes.values():
        for succ in node.successors():
            if succ in predecessors:
                predecessors[succ].add(node.id)
    for node in graph.nodes.values():
        if node.node_type != NodeType.LOGIC or node.variable is None:
            continue
        ancestors = _ancestors(node.id, predecessors)
        has_source = any(
            graph.nodes[a].node_type == NodeType.VARIABLE
            and graph.nodes[a].variable is not None
            and graph.nodes[a].variable.name == node.variable.name
            for a in ancestors
        )
        if not has_source:
            diagnostics.append(
                Diagnostic(
                    "unsourced_logic_variable",
                    node.id,
                    f"logic node {node.id!r} tests {node.variable.name!r} with no "
                    f"upstream variable node on any path",
                )
            )
    return diagnostics


def _ancestors(node_id: str, predecessors: dict[str, set[str]]) -> set[str]:
    seen: set[str] = set()
    queue = deque(predecessors.get(node_id, ()))
    while queue:
        current = queue.popleft()
        if current in seen:
            continue
        seen.add(current)
        queue.extend(predecessors.get(current, ()))
    return seen


def tree_depth(graph: DialogGraph) -> int:
    """Maximum number of edges on any simple path starting at the start node."""
    best = 0
    path: set[str] = {graph.start}

    def dfs(node_id: str, depth: int) -> None:
        nonlocal best
        best = max(best, depth)
        for succ in graph.nodes[node_id].successors():
            if succ not in graph.nodes or succ in path:
                continue
            path.add(succ)
            dfs(succ, depth + 1)
            path.remove(succ)

    dfs(graph.start, 0)
    return best
