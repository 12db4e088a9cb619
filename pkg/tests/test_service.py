from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient
from test_policy import StubNlu

from dialogtree.nlu import LexicalNlu, ModeLabel
from dialogtree.policy import matches_authored_text
from dialogtree.retrieval import LexicalEmbeddingProvider, Retriever
from dialogtree.service import create_app


@pytest.fixture()
def clarification_client(mini_graph):
    # free-mode question with two candidate answers: the service must ask the
    # transport question first, then answer after the clarifying click
    nlu = StubNlu(
        mode=ModeLabel.FREE, goals={"train_seat", "plane_class"}, intents=["Train", "Train"]
    )
    app = create_app(mini_graph, nlu)
    return TestClient(app)


@pytest.fixture()
def lexical_client(mini_graph):
    nlu = LexicalNlu(Retriever(mini_graph, LexicalEmbeddingProvider()))
    return TestClient(create_app(mini_graph, nlu))


class TestSessionLifecycle:
    def test_create_returns_start_text_and_suggestions(self, clarification_client):
        response = clarification_client.post("/api/sessions")
        assert response.status_code == 201
        body = response.json()
        assert body["session_id"]
        [message] = body["messages"]
        assert message["node_id"] == "start"
        assert message["text"].startswith("What topic do you have questions about?")
        assert message["suggestions"] == [
            "Transportation",
            "Lodging and accommodation",
            "Per diem allowances",
        ]
        assert body["awaiting"] == "intent"

    def test_unknown_session_404(self, clarification_client):
        response = clarification_client.post(
            "/api/sessions/nope/messages", json={"text": "hi"}
        )
        assert response.status_code == 404

    def test_expired_session_404(self, mini_graph):
        nlu = StubNlu(mode=ModeLabel.FREE, goals={"train_seat"})
        client = TestClient(create_app(mini_graph, nlu, idle_timeout=0.0))
        session_id = client.post("/api/sessions").json()["session_id"]
        time.sleep(0.02)
        response = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "hello"}
        )
        assert response.status_code == 404

    def test_delete_ends_session(self, clarification_client):
        session_id = clarification_client.post("/api/sessions").json()["session_id"]
        assert clarification_client.delete(f"/api/sessions/{session_id}").status_code == 200
        assert clarification_client.get(f"/api/sessions/{session_id}").status_code == 404

    def test_healthz(self, clarification_client):
        assert clarification_client.get("/healthz").status_code == 200

    def test_graph_meta(self, clarification_client):
        body = clarification_client.get("/api/graph/meta").json()
        assert body == {"node_count": 17, "tree_depth": 4, "name": "mini-travel"}

    def test_rating_endpoint_is_a_noop(self, clarification_client):
        response = clarification_client.post(
            "/api/ratings", json={"session_id": "x", "quality": 4, "length": 3}
        )
        assert response.status_code == 200
        assert response.json() == {"recorded": False}


class TestMessages:
    def test_clarification_dialog(self, clarification_client):
        client = clarification_client
        session_id = client.post("/api/sessions").json()["session_id"]
        first = client.post(
            f"/api/sessions/{session_id}/messages",
            json={"text": "I want to book a seat on the train. Can I get a refund if needed?"},
        ).json()
        # two candidates diverge at the transport question: ask to clarify
        assert [m["node_id"] for m in first["messages"]] == ["transport_q"]
        assert first["awaiting"] == "intent"
        assert not first["done"]
        second = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "Train"}
        ).json()
        assert [m["node_id"] for m in second["messages"]] == ["train_seat"]
        assert second["messages"][0]["text"] == "Seat reservations are allowed for train travel."
        assert second["done"]
        assert second["awaiting"] == "none"

    def test_message_to_done_session_409(self, mini_graph):
        nlu = StubNlu(mode=ModeLabel.FREE, goals={"train_class"})
        client = TestClient(create_app(mini_graph, nlu))
        session_id = client.post("/api/sessions").json()["session_id"]
        done = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "train class?"}
        ).json()
        assert done["done"]
        response = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "more"}
        )
        assert response.status_code == 409

    def test_empty_text_422(self, clarification_client):
        session_id = clarification_client.post("/api/sessions").json()["session_id"]
        response = clarification_client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "   "}
        )
        assert response.status_code == 422

    def test_missing_text_422(self, clarification_client):
        session_id = clarification_client.post("/api/sessions").json()["session_id"]
        response = clarification_client.post(
            f"/api/sessions/{session_id}/messages", json={}
        )
        assert response.status_code == 422

    def test_idempotent_message_id(self, clarification_client):
        client = clarification_client
        session_id = client.post("/api/sessions").json()["session_id"]
        payload = {"text": "seats on trains?", "message_id": "m1"}
        first = client.post(f"/api/sessions/{session_id}/messages", json=payload).json()
        replay = client.post(f"/api/sessions/{session_id}/messages", json=payload).json()
        assert replay == first
        # the replay must not have advanced the dialog
        state = client.get(f"/api/sessions/{session_id}").json()
        assert state["transcript"].count({"author": "user", "text": "seats on trains?"}) == 1

    def test_variable_awaiting_flow(self, mini_graph):
        nlu = StubNlu(mode=ModeLabel.FREE, goals={"rate_france"})
        client = TestClient(create_app(mini_graph, nlu))
        session_id = client.post("/api/sessions").json()["session_id"]
        asked = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "rate in France?"}
        ).json()
        assert asked["awaiting"] == "variable"
        assert asked["messages"][-1]["node_id"] == "country_var"
        answered = client.post(
            f"/api/sessions/{session_id}/messages", json={"text": "France"}
        ).json()
        assert answered["messages"][-1]["text"] == (
            "In France, you can claim up to 110 euro per night for accommodation."
        )
        assert answered["done"]


class TestStateEndpoint:
    def test_transcript_restores_dialog(self, clarification_client):
        client = clarification_client
        session_id = client.post("/api/sessions").json()["session_id"]
        client.post(f"/api/sessions/{session_id}/messages", json={"text": "seats?"})
        state = client.get(f"/api/sessions/{session_id}").json()
        authors = [entry["author"] for entry in state["transcript"]]
        assert authors == ["system", "user", "system"]
        assert state["transcript"][1] == {"author": "user", "text": "seats?"}
        assert state["suggestions"] == ["Train", "Plane", "Personal car"]
        assert state["awaiting"] == "intent"


class TestServiceInvariants:
    def test_no_unauthored_text_crosses_the_wire(self, lexical_client, mini_graph):
        client = lexical_client
        session_id = client.post("/api/sessions").json()["session_id"]
        utterances = ["How do I book a hotel?", "Booking a hotel", "Transportation"]
        for text in utterances:
            response = client.post(
                f"/api/sessions/{session_id}/messages", json={"text": text}
            )
            if response.status_code != 200:
                break
            for message in response.json()["messages"]:
                node = mini_graph.nodes[message["node_id"]]
                assert matches_authored_text(message["text"], node.text)
            if response.json()["done"]:
                break

    def test_session_isolation(self, mini_graph):
        def fresh_client():
            # stateless stub: guided mode, intents resolved by echo matching
            return TestClient(create_app(mini_graph, StubNlu(mode=ModeLabel.GUIDED)))

        # interleaved requests across two sessions on one service
        client = fresh_client()
        a = client.post("/api/sessions").json()["session_id"]
        b = client.post("/api/sessions").json()["session_id"]
        ra1 = client.post(f"/api/sessions/{a}/messages", json={"text": "Transportation"}).json()
        rb1 = client.post(f"/api/sessions/{b}/messages", json={"text": "Transportation"}).json()
        ra2 = client.post(f"/api/sessions/{a}/messages", json={"text": "Train"}).json()
        rb2 = client.post(f"/api/sessions/{b}/messages", json={"text": "Plane"}).json()

        # serial execution of the same per-session scripts
        client2 = fresh_client()
        a2 = client2.post("/api/sessions").json()["session_id"]
        sa1 = client2.post(f"/api/sessions/{a2}/messages", json={"text": "Transportation"}).json()
        sa2 = client2.post(f"/api/sessions/{a2}/messages", json={"text": "Train"}).json()
        b2 = client2.post("/api/sessions").json()["session_id"]
        sb1 = client2.post(f"/api/sessions/{b2}/messages", json={"text": "Transportation"}).json()
        sb2 = client2.post(f"/api/sessions/{b2}/messages", json={"text": "Plane"}).json()

        assert (ra1, ra2) == (sa1, sa2)
        assert (rb1, rb2) == (sb1, sb2)
