from __future__ import annotations

import random

import pytest
from conftest import info, make_graph, q
from oracles import barnard_oracle

from dialogtree.evaluation import (
    EmptyReportError,
    Metrics,
    Table2x2,
    aggregate,
    barnard_exact,
    compare_success,
    read_report,
    recall_at_k,
    write_report,
)
from dialogtree.nlu import ModeLabel
from dialogtree.retrieval import LexicalEmbeddingProvider
from dialogtree.simulate import DialogOutcome, SimConfig, SimReport


def outcome(
    success=True,
    length=4,
    true_mode=ModeLabel.FREE,
    predicted_mode=ModeLabel.FREE,
    degraded=(),
) -> DialogOutcome:
    return DialogOutcome(
        success=success,
        length=length,
        true_mode=true_mode,
        predicted_mode=predicted_mode,
        turns_used=length,
        termination="goal" if success else "dead_end",
        goal="g",
        degraded_events=tuple(degraded),
    )


def report(outcomes) -> SimReport:
    return SimReport(tuple(outcomes), SimConfig(num_dialogs=max(len(outcomes), 1)))


class TestAggregate:
    def test_all_successful(self):
        metrics = aggregate(report([outcome() for _ in range(8)]))
        assert metrics.success_rate == 100.0
        assert metrics.successes == 8

    def test_empty_report(self):
        with pytest.raises(EmptyReportError):
            aggregate(report([]))

    def test_f1_perfect_and_zero(self):
        perfect = [
            outcome(true_mode=ModeLabel.FREE, predicted_mode=ModeLabel.FREE),
            outcome(true_mode=ModeLabel.GUIDED, predicted_mode=ModeLabel.GUIDED),
        ]
        assert aggregate(report(perfect)).mode_f1 == 1.0
        wrong = [
            outcome(true_mode=ModeLabel.FREE, predicted_mode=ModeLabel.GUIDED),
            outcome(true_mode=ModeLabel.GUIDED, predicted_mode=ModeLabel.FREE),
        ]
        assert aggregate(report(wrong)).mode_f1 == 0.0

    def test_f1_hand_computed(self):
        # 3 TP, 1 FP, 1 FN -> F1 = 2*3 / (2*3 + 1 + 1) = 0.75
        outcomes = (
            [outcome(true_mode=ModeLabel.FREE, predicted_mode=ModeLabel.FREE)] * 3
            + [outcome(true_mode=ModeLabel.GUIDED, predicted_mode=ModeLabel.FREE)]
            + [outcome(true_mode=ModeLabel.FREE, predicted_mode=ModeLabel.GUIDED)]
        )
        assert aggregate(report(outcomes)).mode_f1 == pytest.approx(0.75)

    def test_lengths_split_by_true_mode(self):
        outcomes = [
            outcome(true_mode=ModeLabel.GUIDED, length=10),
            outcome(true_mode=ModeLabel.GUIDED, length=14),
            outcome(true_mode=ModeLabel.FREE, length=3),
        ]
        metrics = aggregate(report(outcomes))
        assert metrics.avg_length_guided == 12.0
        assert metrics.avg_length_free == 3.0

    def test_degraded_rate(self):
        outcomes = [outcome(), outcome(degraded=("nlu_intent_degraded",))]
        assert aggregate(report(outcomes)).degraded_rate == 50.0

    def test_permutation_invariant(self):
        rng = random.Random(2)
        outcomes = [
            outcome(
                success=rng.random() < 0.7,
                length=rng.randint(2, 20),
                true_mode=rng.choice((ModeLabel.FREE, ModeLabel.GUIDED)),
                predicted_mode=rng.choice((ModeLabel.FREE, ModeLabel.GUIDED)),
            )
            for _ in range(30)
        ]
        shuffled = outcomes[:]
        rng.shuffle(shuffled)
        assert aggregate(report(outcomes)) == aggregate(report(shuffled))


class TestRecallAtK:
    def graph(self):
        return make_graph(
            [
                q("s", ["d1"], start=True),
                info("d1", "d2", text="trains run on rails"),
                info("d2", "d3", text="hotels have rooms"),
                info("d3", None, text="planes fly in the sky"),
            ]
        )

    def test_full_k_is_perfect(self):
        graph = self.graph()
        questions = [("trains?", "d1"), ("hotels?", "d2"), ("planes?", "d3")]
        curve = recall_at_k(graph, questions, LexicalEmbeddingProvider(), [3])
        assert curve == [(3, 1.0)]

    def test_monotone_in_k(self, mini_graph):
        questions = [
            (question, node_id)
            for node_id, qs in mini_graph.faq.items()
            for question in qs
        ]
        curve = recall_at_k(
            mini_graph, questions, LexicalEmbeddingProvider(), [1, 2, 3, 5, 8, 11]
        )
        values = [recall for _, recall in curve]
        assert values == sorted(values)

    def test_matches_bruteforce_ranking(self, mini_graph):
        # independent oracle: rank candidates per question by dot product
        # computed directly, then count membership
        provider = LexicalEmbeddingProvider()
        questions = [
            (question, node_id)
            for node_id, qs in sorted(mini_graph.faq.items())
            for question in qs
        ]
        candidates = [
            n.id
            for n in mini_graph.nodes.values()
            if n.node_type.value in ("information", "question") and n.text.strip()
        ]
        for k in (1, 3, 5):
            hits = 0
            for question, node_id in questions:
                qv = provider.embed(question)
                scored = sorted(
                    candidates,
                    key=lambda nid: (-float(provider.embed(mini_graph.nodes[nid].text) @ qv), nid),
                )
                if node_id in scored[:k]:
                    hits += 1
            expected = hits / len(questions)
            [(_, got)] = recall_at_k(mini_graph, questions, provider, [k])
            assert got == pytest.approx(expected)

    def test_unknown_answer_node_rejected(self):
        with pytest.raises(KeyError):
            recall_at_k(self.graph(), [("q", "ghost")], LexicalEmbeddingProvider(), [1])


class TestBarnardExact:
    def test_identical_proportions_not_significant(self):
        assert barnard_exact(Table2x2(5, 10, 5, 10)) >= 0.5

    def test_extreme_table_matches_oracle(self):
        p = barnard_exact(Table2x2(5, 5, 0, 5))
        assert p == pytest.approx(barnard_oracle(5, 5, 0, 5), abs=1e-9)

    def test_small_table_sweep_matches_oracle(self):
        rng = random.Random(8)
        for _ in range(25):
            na, nb = rng.randint(1, 8), rng.randint(1, 8)
            xa, xb = rng.randint(0, na), rng.randint(0, nb)
            p = barnard_exact(Table2x2(xa, na, xb, nb))
            assert p == pytest.approx(barnard_oracle(xa, na, xb, nb), abs=1e-9), (
                xa,
                na,
                xb,
                nb,
            )

    def test_p_value_in_unit_interval(self):
        rng = random.Random(12)
        for _ in range(20):
            na, nb = rng.randint(1, 25), rng.randint(1, 25)
            xa, xb = rng.randint(0, na), rng.randint(0, nb)
            p = barnard_exact(Table2x2(xa, na, xb, nb))
            assert 0.0 <= p <= 1.0

    def test_larger_samples_with_same_proportions_shrink_p(self):
        small = barnard_exact(Table2x2(4, 5, 1, 5))
        doubled = barnard_exact(Table2x2(8, 10, 2, 10))
        quadrupled = barnard_exact(Table2x2(16, 20, 4, 20))
        assert doubled <= small
        assert quadrupled <= doubled

    def test_table_validation(self):
        with pytest.raises(ValueError):
            Table2x2(5, 4, 0, 5)
        with pytest.raises(ValueError):
            Table2x2(0, 0, 0, 5)

    def test_compare_follows_observed_direction(self):
        result = compare_success(Table2x2(47, 61, 59, 68))
        assert result.direction == "b"
        assert result.p_value == pytest.approx(
            barnard_exact(Table2x2(59, 68, 47, 61))
        )
        assert result.variant == "wald-unpooled"


class TestReports:
    METRICS = Metrics(
        success_rate=84.2,
        avg_length_guided=10.31,
        avg_length_free=2.79,
        mode_f1=0.95,
        degraded_rate=0.0,
        n_dialogs=500,
        successes=421,
    )

    @pytest.mark.parametrize("fmt,suffix", [("json", ".json"), ("csv", ".csv")])
    def test_round_trip(self, tmp_path, fmt, suffix):
        path = tmp_path / f"report{suffix}"
        write_report(self.METRICS, str(path), fmt)
        assert read_report(str(path)) == self.METRICS

    def test_writes_are_deterministic(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        write_report(self.METRICS, str(a), "json")
        write_report(self.METRICS, str(b), "json")
        assert a.read_bytes() == b.read_bytes()

    def test_csv_header_fixed(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report(self.METRICS, str(path), "csv")
        header = path.read_text().splitlines()[0]
        assert header == (
            "success_rate,avg_length_guided,avg_length_free,mode_f1,"
            "degraded_rate,n_dialogs,successes"
        )

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_report(self.METRICS, str(tmp_path / "x"), "xml")
