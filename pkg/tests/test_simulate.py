from __future__ import annotations

import random
from collections import Counter

import pytest
from conftest import info, make_graph, q

from dialogtree.graph import tree_depth
from dialogtree.nlu import ModeLabel
from dialogtree.policy import ActionKind, DialogState, SystemAction
from dialogtree.simulate import (
    NoGoalCandidatesError,
    OracleNlu,
    SimConfig,
    UserGoal,
    first_utterance,
    oracle_policy_factory,
    respond,
    run_batch,
    run_dialog,
    sample_goal,
)


def faq_graph():
    return make_graph(
        [
            q("s", ["x", "y"], start=True),
            info("x", None, text="answer x"),
            info("y", None, text="answer y"),
        ],
        faq={"x": ["what is x?"], "y": ["what is y?", "tell me about y"]},
        paraphrases={"s->x": ["to x please"], "s->y": ["y please", "option y"]},
    )


class TestSampleGoal:
    def test_single_faq_node_always_sampled(self):
        graph = make_graph(
            [q("s", ["x"], start=True), info("x")], faq={"x": ["what is x?"]}
        )
        rng = random.Random(0)
        for _ in range(20):
            assert sample_goal(graph, rng).goal == "x"

    def test_faqless_nodes_never_sampled(self):
        graph = faq_graph()
        rng = random.Random(1)
        for _ in range(200):
            assert sample_goal(graph, rng).goal in {"x", "y"}

    def test_two_goals_roughly_uniform(self):
        graph = faq_graph()
        rng = random.Random(42)
        counts = Counter(sample_goal(graph, rng).goal for _ in range(10_000))
        assert 0.45 <= counts["x"] / 10_000 <= 0.55

    def test_no_candidates(self):
        graph = make_graph([q("s", ["x"], start=True), info("x")])
        with pytest.raises(NoGoalCandidatesError):
            sample_goal(graph, random.Random(0))

    def test_mode_split_fixed(self):
        graph = faq_graph()
        rng = random.Random(3)
        free = SimConfig(mode_split="free")
        guided = SimConfig(mode_split="guided")
        assert all(sample_goal(graph, rng, free).mode == ModeLabel.FREE for _ in range(10))
        assert all(sample_goal(graph, rng, guided).mode == ModeLabel.GUIDED for _ in range(10))

    def test_variable_assignment_satisfies_path_logic(self, mini_graph):
        rng = random.Random(9)
        for _ in range(300):
            goal = sample_goal(mini_graph, rng)
            if goal.goal == "rate_france":
                assert goal.variable_assignment == {"COUNTRY": "France"}
            elif goal.goal == "rate_default":
                assert goal.variable_assignment["COUNTRY"] != "France"


class TestFirstUtterance:
    def test_free_single_question(self):
        graph = faq_graph()
        goal = UserGoal("x", ModeLabel.FREE, ("s", "x"), {}, {})
        assert first_utterance(goal, graph, random.Random(0)) == "what is x?"

    def test_guided_paraphrase_of_first_edge(self):
        graph = faq_graph()
        answer = graph.answer("s->y")
        goal = UserGoal("y", ModeLabel.GUIDED, ("s", "y"), {"s": answer}, {})
        utterances = {first_utterance(goal, graph, random.Random(i)) for i in range(20)}
        assert utterances <= {"y please", "option y"}

    def test_guided_falls_back_to_intent_text(self):
        graph = make_graph(
            [q("s", ["x"], start=True), info("x")], faq={"x": ["what is x?"]}
        )
        answer = graph.answer("s->x")
        goal = UserGoal("x", ModeLabel.GUIDED, ("s", "x"), {"s": answer}, {})
        assert first_utterance(goal, graph, random.Random(0)) == "go to x"


class TestRespond:
    def test_question_on_path(self, mini_graph):
        answer = mini_graph.answer("a_train")
        goal = UserGoal(
            "train_seat",
            ModeLabel.GUIDED,
            ("start", "transport_q", "train_seat"),
            {"transport_q": answer, "start": mini_graph.answer("a_transport")},
            {},
        )
        reply = respond("transport_q", goal, mini_graph, random.Random(0))
        assert reply in ("Train", "By rail", "Taking the train")

    def test_variable_node_returns_assignment(self, mini_graph):
        goal = UserGoal(
            "rate_france",
            ModeLabel.FREE,
            ("start", "lodging_q", "country_var", "country_logic", "rate_france"),
            {},
            {"COUNTRY": "France"},
        )
        assert respond("country_var", goal, mini_graph, random.Random(0)) == "France"

    def test_information_node_no_utterance(self, mini_graph):
        goal = UserGoal("train_seat", ModeLabel.FREE, ("start",), {}, {})
        assert respond("train_seat", goal, mini_graph, random.Random(0)) is None

    def test_off_path_question_steers_toward_goal(self, mini_graph):
        goal = UserGoal("train_seat", ModeLabel.FREE, ("start",), {}, {})
        events: list[str] = []
        reply = respond("transport_q", goal, mini_graph, random.Random(0), events)
        assert reply in ("Train", "By rail", "Taking the train")
        assert events == ["off_path_question"]


class LoopingPolicy:
    """Fake policy that ping-pongs between two nodes forever."""

    def __init__(self, nodes=("a", "b")):
        self.nodes = nodes
        self.i = 0

    def start_session(self):
        state = DialogState(current=self.nodes[0], history=[self.nodes[0]])
        action = SystemAction(ActionKind.ASK, self.nodes[0], "ping")
        state.action_log.append(action)
        return state, action

    def handle_user_input(self, state, utterance):
        self.i += 1
        node = self.nodes[self.i % len(self.nodes)]
        action = SystemAction(ActionKind.ASK, node, "pong")
        state.action_log.append(action)
        return [action]


class TestRunDialog:
    def test_oracle_reaches_any_sampled_goal(self, mini_graph):
        rng = random.Random(123)
        for _ in range(40):
            goal = sample_goal(mini_graph, rng)
            policy = oracle_policy_factory(mini_graph)(goal)
            outcome = run_dialog(mini_graph, policy, goal, SimConfig(), rng)
            assert outcome.success, (goal, outcome.termination)
            assert outcome.termination == "goal"
            assert outcome.predicted_mode == goal.mode

    def test_pingpong_policy_hits_patience(self, mini_graph):
        goal = UserGoal("train_seat", ModeLabel.FREE, ("start",), {}, {})
        # the fake policy asks off-graph nodes; patience must fire, not crash
        outcome = run_dialog(
            mini_graph, LoopingPolicy(("start", "transport_q")), goal, SimConfig(patience=3)
        )
        assert outcome.termination == "patience"
        assert not outcome.success

    def test_turn_cap_is_four_times_tree_depth(self):
        nodes = [q("s", ["c0"], start=True)]
        nodes += [info(f"c{i}", f"c{i + 1}") for i in range(31)]
        nodes += [info("c31", None, text="the end.")]
        graph = make_graph(nodes, faq={"c31": ["how does it end?"]})
        assert tree_depth(graph) == 32
        goal = UserGoal("c31", ModeLabel.FREE, ("s",), {}, {})
        outcome = run_dialog(
            graph, LoopingPolicy(("s", "s")), goal, SimConfig(patience=10_000)
        )
        assert outcome.termination == "turn_cap"
        assert outcome.turns_used <= 4 * 32

    def test_success_requires_goal_ask_not_visit(self, mini_graph):
        # a policy that SKIPs the goal node and never asks it cannot succeed
        class SkippingPolicy(LoopingPolicy):
            def handle_user_input(self, state, utterance):
                action = SystemAction(ActionKind.SKIP, "train_seat")
                state.action_log.append(action)
                return [SystemAction(ActionKind.ASK, "transport_q", "t"), action][::-1]

        goal = UserGoal("train_seat", ModeLabel.FREE, ("start",), {}, {})
        outcome = run_dialog(
            mini_graph, SkippingPolicy(), goal, SimConfig(patience=3)
        )
        assert not outcome.success


class TestRunBatch:
    def test_same_seed_reproduces_everything(self, mini_graph):
        factory = oracle_policy_factory(mini_graph)
        config = SimConfig(num_dialogs=40, seed=11)
        first = run_batch(mini_graph, factory, config)
        second = run_batch(mini_graph, factory, config)
        assert first == second

    def test_batch_size(self, mini_graph):
        report = run_batch(
            mini_graph, oracle_policy_factory(mini_graph), SimConfig(num_dialogs=25, seed=1)
        )
        assert len(report.outcomes) == 25

    def test_uniform_mode_split_within_binomial_interval(self, mini_graph):
        report = run_batch(
            mini_graph, oracle_policy_factory(mini_graph), SimConfig(num_dialogs=500, seed=7)
        )
        free = sum(1 for o in report.outcomes if o.true_mode == ModeLabel.FREE)
        # 99% binomial interval around 250/500
        assert 221 <= free <= 279

    def test_no_dialog_exceeds_cap_or_patience(self, mini_graph):
        config = SimConfig(num_dialogs=200, seed=3)
        cap = config.turn_cap_multiplier * tree_depth(mini_graph)
        report = run_batch(mini_graph, oracle_policy_factory(mini_graph), config)
        for outcome in report.outcomes:
            assert outcome.turns_used <= cap
            visits = Counter(
                e.node for e in outcome.transcript if isinstance(e, SystemAction)
            )
            assert max(visits.values()) <= config.patience

    def test_free_dialogs_not_longer_than_guided(self, mini_graph):
        report = run_batch(
            mini_graph, oracle_policy_factory(mini_graph), SimConfig(num_dialogs=300, seed=5)
        )
        by_mode = {ModeLabel.FREE: [], ModeLabel.GUIDED: []}
        for outcome in report.outcomes:
            by_mode[outcome.true_mode].append(outcome.length)
        avg = {m: sum(v) / len(v) for m, v in by_mode.items()}
        assert avg[ModeLabel.FREE] <= avg[ModeLabel.GUIDED]


class TestOracleNlu:
    def test_intent_resolved_from_paraphrase(self, mini_graph):
        goal = UserGoal(
            "train_seat",
            ModeLabel.GUIDED,
            ("start", "transport_q", "train_seat"),
            {"transport_q": mini_graph.answer("a_train")},
            {},
        )
        oracle = OracleNlu(mini_graph, goal)
        candidates = ["Train", "Plane", "Personal car"]
        assert oracle.classify_intent("By rail", candidates).index == 0
        assert oracle.classify_intent("Flying", candidates).index == 1

    def test_goal_filter_returns_exactly_the_goal(self, mini_graph):
        goal = UserGoal("perdiem_full", ModeLabel.FREE, ("start",), {}, {})
        oracle = OracleNlu(mini_graph, goal)
        assert oracle.filter_goals("whatever", mini_graph).goals == frozenset({"perdiem_full"})
