"""User simulator: samples goals, generates utterances, runs batch dialogs.

A simulated user draws a goal node that carries stored questions, walks into
the dialog with either a concrete question (free mode) or a topic choice
(guided mode), and answers system questions with stored paraphrases. All
randomness flows from per-dialog seeded generators, so batches reproduce
bit-for-bit.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable

from .graph import (
    Answer,
    DialogGraph,
    NodeType,
    ValueKind,
    evaluate_condition,
    parse_condition,
    render_value,
    tree_depth,
)
from .nlu import GoalFilterResult, IntentDecision, ModeLabel, NluAdapter, lexical_best_match
from .planning import PlanConfig, enumerate_paths
from .policy import ActionKind, DialogEngine, SystemAction, UserTurn, dialog_length

logger = logging.getLogger(__name__)

# values offered when a variable is unconstrained by the sampled path
_TEXT_POOL = ("Italy", "Spain", "Norway", "Japan", "Canada", "Portugal")


class SimulationError(Exception):
    pass


class NoGoalCandidatesError(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    num_dialogs: int = 500
    seed: int = 0
    patience: int = 3  # abort after this many visits to one node
    turn_cap_multiplier: int = 4  # T = multiplier x tree depth
    mode_split: str = "uniform"  # uniform | free | guided

    def __post_init__(self) -> None:
        if self.num_dialogs < 1:
            raise ValueError("num_dialogs must be >= 1")
        if self.patience < 2:
            raise ValueError("patience must be >= 2")
        if self.turn_cap_multiplier < 1:
            raise ValueError("turn_cap_multiplier must be >= 1")
        if self.mode_split not in ("uniform", "free", "guided"):
            raise ValueError(f"bad mode_split: {self.mode_split!r}")


@dataclass(frozen=True)
class UserGoal:
    goal: str
    mode: ModeLabel
    path_nodes: tuple[str, ...]  # start .. goal
    edge_choices: dict[str, Answer] = field(default_factory=dict)  # question node -> answer taken
    variable_assignment: dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class DialogOutcome:
    success: bool
    length: int
    true_mode: ModeLabel
    predicted_mode: ModeLabel | None
    turns_used: int
    termination: str  # goal | patience | turn_cap | dead_end
    goal: str
    events: tuple[str, ...] = ()  # simulator-side events (off-path recovery etc.)
    degraded_events: tuple[str, ...] = ()  # engine-side NLU/planning fallbacks
    transcript: tuple = ()  # the raw action log entries


@dataclass(frozen=True)
class SimReport:
    outcomes: tuple[DialogOutcome, ...]
    config: SimConfig
    graph_name: str = ""


class OracleNlu(NluAdapter):
    """Perfect decisions derived from the sampled goal.

    Mode is the goal's true mode, the goal filter returns exactly the goal
    node, and intents are resolved by reverse paraphrase lookup.
    """

    def __init__(self, graph: DialogGraph, goal: UserGoal):
        self.graph = graph
        self.goal = goal
        self._answer_by_utterance: dict[str, str] = {}
        for node in graph.nodes.values():
            for answer in node.answers:
                self._answer_by_utterance.setdefault(answer.intent_text, answer.id)
        for answer_id, texts in graph.paraphrases.items():
            for text in texts:
                self._answer_by_utterance.setdefault(text, answer_id)

    def classify_mode(self, utterance: str) -> ModeLabel:
        return self.goal.mode

    def classify_intent(self, utterance: str, candidates: list[str]) -> IntentDecision:
        answer_id = self._answer_by_utterance.get(utterance)
        if answer_id is not None:
            intent = self.graph.answer(answer_id).intent_text
            if intent in candidates:
                return IntentDecision(candidates.index(intent))
        return IntentDecision(lexical_best_match(utterance, list(candidates)), degraded=True)

    def filter_goals(self, utterance: str, graph: DialogGraph) -> GoalFilterResult:
        return GoalFilterResult(frozenset({self.goal.goal}))


PolicyFactory = Callable[[UserGoal], DialogEngine]


def oracle_policy_factory(graph: DialogGraph, engine_config=None) -> PolicyFactory:
    def factory(goal: UserGoal) -> DialogEngine:
        return DialogEngine(graph, OracleNlu(graph, goal), engine_config)

    return factory


def sample_goal(
    graph: DialogGraph, rng: random.Random, config: SimConfig | None = None
) -> UserGoal:
    """Uniform goal over question-bearing nodes, with a path and variables."""
    config = config or SimConfig()
    candidates = graph.faq_nodes()
    if not candidates:
        raise NoGoalCandidatesError("no node carries user questions")
    goal_id = rng.choice(candidates)
    if config.mode_split == "free":
        mode = ModeLabel.FREE
    elif config.mode_split == "guided":
        mode = ModeLabel.GUIDED
    else:
        mode = rng.choice((ModeLabel.FREE, ModeLabel.GUIDED))
    path_set = enumerate_paths(graph, graph.start, goal_id, PlanConfig())
    if not path_set.paths:
        raise SimulationError(f"goal {goal_id!r} is unreachable from start")
    path = rng.choice(path_set.paths)
    edge_choices = _edges_along(graph, path)
    assignment = _sample_assignment(graph, path, rng)
    return UserGoal(goal_id, mode, path, edge_choices, assignment)


def _edges_along(graph: DialogGraph, path: tuple[str, ...]) -> dict[str, Answer]:
    edges: dict[str, Answer] = {}
    for current, following in zip(path, path[1:]):
        node = graph.nodes[current]
        if node.node_type in (NodeType.START, NodeType.QUESTION):
            answer = next(a for a in node.answers if a.target == following)
            edges[current] = answer
    return edges


def _sample_assignment(
    graph: DialogGraph, path: tuple[str, ...], rng: random.Random
) -> dict[str, object]:
    """Values that make every logic node on the path route along the path."""
    constraints: dict[str, list[tuple[str, str]]] = {}  # name -> (node, wanted target)
    kinds: dict[str, ValueKind] = {}
    for current, following in zip(path, path[1:]):
        node = graph.nodes[current]
        if node.node_type == NodeType.LOGIC and node.variable is not None:
            constraints.setdefault(node.variable.name, []).append((current, following))
            kinds[node.variable.name] = node.variable.value_kind
    for node_id in path:
        node = graph.nodes[node_id]
        if node.node_type == NodeType.VARIABLE and node.variable is not None:
            kinds.setdefault(node.variable.name, node.variable.value_kind)

    assignment: dict[str, object] = {}
    for name, kind in kinds.items():
        wanted = constraints.get(name, [])
        candidates = _candidate_values(graph, name, kind, wanted, rng)
        valid = [
            v
            for v in candidates
            if all(
                _routed_target(graph, node_id, {name: v}) == target
                for node_id, target in wanted
            )
        ]
        if not valid:
            raise SimulationError(
                f"cannot sample a value for {name!r} satisfying the path constraints"
            )
        assignment[name] = rng.choice(valid)
    return assignment


def _candidate_values(
    graph: DialogGraph,
    name: str,
    kind: ValueKind,
    wanted: list[tuple[str, str]],
    rng: random.Random,
) -> list[object]:
    literals: list[object] = []
    for node_id, _ in wanted:
        for branch in graph.nodes[node_id].branches:
            condition = parse_condition(branch.condition)
            if condition is not None:
                literals.append(condition.literal)
    candidates: list[object] = []
    if kind == ValueKind.BOOLEAN:
        candidates = [True, False]
    elif kind == ValueKind.NUMBER:
        for lit in literals:
            if isinstance(lit, (int, float)) and not isinstance(lit, bool):
                candidates.extend([lit, lit - 1, lit + 1, lit + 2])
        candidates.extend([0, 1, 7, rng.randint(10, 99)])
    else:
        candidates = [lit for lit in literals if isinstance(lit, str)]
        candidates.extend(_TEXT_POOL)
    return candidates


def _routed_target(graph: DialogGraph, logic_node_id: str, beliefstate: dict) -> str | None:
    """Branch target the engine would take, mirroring its evaluation order."""
    node = graph.nodes[logic_node_id]
    default_target: str | None = None
    for branch in node.branches:
        condition = parse_condition(branch.condition)
        if condition is None:
            default_target = branch.target
            continue
        try:
            if evaluate_condition(condition, beliefstate):
                return branch.target
        except Exception:
            continue
    return default_target


def first_utterance(goal: UserGoal, graph: DialogGraph, rng: random.Random) -> str:
    """Free: a stored question for the goal. Guided: a first-edge paraphrase."""
    if goal.mode == ModeLabel.FREE:
        questions = graph.faq.get(goal.goal, ())
        if not questions:
            raise SimulationError(f"goal {goal.goal!r} has no stored questions")
        return rng.choice(questions)
    if len(goal.path_nodes) < 2:
        raise SimulationError("guided goal path has no first edge")
    answer = goal.edge_choices[goal.path_nodes[0]]
    return _utter_intent(graph, answer, rng)


def _utter_intent(graph: DialogGraph, answer: Answer, rng: random.Random) -> str:
    paraphrases = graph.paraphrases.get(answer.id)
    if paraphrases:
        return rng.choice(paraphrases)
    return answer.intent_text  # fallback when no paraphrases are stored


def respond(
    asked_node: str,
    goal: UserGoal,
    graph: DialogGraph,
    rng: random.Random,
    events: list[str] | None = None,
) -> str | None:
    """The simulated user's reply to an ASK; None for information nodes."""
    node = graph.nodes[asked_node]
    if node.node_type == NodeType.INFORMATION:
        return None
    if node.node_type == NodeType.VARIABLE:
        assert node.variable is not None
        name = node.variable.name
        if name in goal.variable_assignment:
            return render_value(goal.variable_assignment[name])  # type: ignore[arg-type]
        if events is not None:
            events.append("unplanned_variable")
        return render_value(_generic_value(node.variable.value_kind, rng))
    # question or start node
    answer = goal.edge_choices.get(asked_node)
    if answer is None:
        answer = _recovery_answer(graph, node.answers, goal.goal)
        if events is not None:
            events.append("off_path_question")
        if answer is None:
            answer = node.answers[0]
    return _utter_intent(graph, answer, rng)


def _generic_value(kind: ValueKind, rng: random.Random) -> object:
    if kind == ValueKind.BOOLEAN:
        return rng.choice((True, False))
    if kind == ValueKind.NUMBER:
        return rng.randint(0, 99)
    return rng.choice(_TEXT_POOL)


def _recovery_answer(
    graph: DialogGraph, answers: tuple[Answer, ...], goal_id: str
) -> Answer | None:
    """The answer whose target is closest (BFS hops) to the goal."""
    best: Answer | None = None
    best_distance: int | None = None
    for answer in answers:
        distance = _distance(graph, answer.target, goal_id)
        if distance is None:
            continue
        if best_distance is None or distance < best_distance:
            best = answer
            best_distance = distance
    return best


def _distance(graph: DialogGraph, origin: str, goal: str) -> int | None:
    if origin == goal:
        return 0
    seen = {origin}
    queue = deque([(origin, 0)])
    while queue:
        node_id, hops = queue.popleft()
        for succ in graph.successors(node_id):
            if succ == goal:
                return hops + 1
            if succ not in seen:
                seen.add(succ)
                queue.append((succ, hops + 1))
    return None


def run_dialog(
    graph: DialogGraph,
    policy: DialogEngine,
    goal: UserGoal,
    config: SimConfig | None = None,
    rng: random.Random | None = None,
) -> DialogOutcome:
    """Drive one dialog until goal, patience, turn cap, or dead end."""
    config = config or SimConfig()
    rng = rng or random.Random(config.seed)
    turn_cap = config.turn_cap_multiplier * tree_depth(graph)
    visits: Counter[str] = Counter()
    events: list[str] = []
    turns_used = 0
    success = False
    termination: str | None = None

    state, start_action = policy.start_session()

    def process(actions: list[SystemAction]) -> bool:
        nonlocal turns_used, success, termination
        for action in actions:
            visits[action.node] += 1
            turns_used += 1
            if action.kind == ActionKind.ASK and action.node == goal.goal:
                success = True
                termination = "goal"
                return False
            if visits[action.node] >= config.patience:
                termination = "patience"
                return False
            if turns_used >= turn_cap:
                termination = "turn_cap"
                return False
        return True

    keep_going = process([start_action])
    if keep_going:
        utterance: str | None = first_utterance(goal, graph, rng)
        while keep_going:
            if utterance is None:
                termination = "dead_end"
                break
            actions = policy.handle_user_input(state, utterance)
            keep_going = process(actions)
            if not keep_going:
                break
            if state.done:
                termination = "dead_end"
                break
            last_ask = next(
                (a for a in reversed(actions) if a.kind == ActionKind.ASK), None
            )
            if last_ask is None:
                termination = "dead_end"
                break
            utterance = respond(last_ask.node, goal, graph, rng, events)
    if termination is None:
        termination = "dead_end"

    return DialogOutcome(
        success=success,
        length=dialog_length(state.action_log),
        true_mode=goal.mode,
        predicted_mode=state.predicted_mode,
        turns_used=turns_used,
        termination=termination,
        goal=goal.goal,
        events=tuple(events),
        degraded_events=tuple(state.degraded_events),
        transcript=tuple(state.action_log),
    )


def run_batch(
    graph: DialogGraph,
    policy_factory: PolicyFactory,
    config: SimConfig | None = None,
) -> SimReport:
    """num_dialogs independent dialogs, each with a (seed, index)-derived rng."""
    config = config or SimConfig()
    outcomes: list[DialogOutcome] = []
    for index in range(config.num_dialogs):
        rng = random.Random(config.seed * 1_000_003 + index)
        goal = sample_goal(graph, rng, config)
        policy = policy_factory(goal)
        outcomes.append(run_dialog(graph, policy, goal, config, rng))
    return SimReport(tuple(outcomes), config, graph_name=graph.name)
