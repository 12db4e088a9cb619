"""HTTP session service exposing the dialog engine to thin clients.

Dialog state lives server-side; clients only render what they are sent.
Sessions expire after an idle timeout, requests to one session are
serialized, and message posting is idempotent under a client-supplied
message id.
"""

from __future__ import annotations

import logging
import secrets
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .backends import BackendError
from .graph import DialogGraph, NodeType, tree_depth
from .nlu import NluAdapter
from .policy import ActionKind, DialogEngine, DialogState, SystemAction, UserTurn
from .retrieval import ProviderError

logger = logging.getLogger(__name__)

DEFAULT_IDLE_TIMEOUT = 1800.0


class MessageIn(BaseModel):
    text: str
    message_id: str | None = None


@dataclass
class SessionRecord:
    state: DialogState
    created: float
    last_active: float
    lock: threading.Lock = field(default_factory=threading.Lock)
    responses: dict[str, dict] = field(default_factory=dict)  # message_id -> reply


class SessionStore:
    def __init__(self, idle_timeout: float = DEFAULT_IDLE_TIMEOUT):
        self.idle_timeout = idle_timeout
        self._sessions: dict[str, SessionRecord] = {}
        self._lock = threading.Lock()

    def create(self, state: DialogState) -> str:
        session_id = secrets.token_urlsafe(16)
        now = time.monotonic()
        with self._lock:
            self._purge(now)
            self._sessions[session_id] = SessionRecord(state, now, now)
        return session_id

    def get(self, session_id: str) -> SessionRecord:
        now = time.monotonic()
        with self._lock:
            self._purge(now)
            record = self._sessions.get(session_id)
            if record is None:
                raise KeyError(session_id)
            record.last_active = now
            return record

    def delete(self, session_id: str) -> bool:
        with self._lock:
            return self._sessions.pop(session_id, None) is not None

    def _purge(self, now: float) -> None:
        expired = [
            sid
            for sid, record in self._sessions.items()
            if now - record.last_active > self.idle_timeout
        ]
        for sid in expired:
            del self._sessions[sid]


def _message_payload(action: SystemAction) -> dict:
    return {
        "node_id": action.node,
        "text": action.rendered_text,
        "suggestions": list(action.suggestions),
    }


def _visible_messages(actions: list[SystemAction]) -> list[dict]:
    return [_message_payload(a) for a in actions if a.kind == ActionKind.ASK]


def create_app(
    graph: DialogGraph,
    nlu: NluAdapter,
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    engine: DialogEngine | None = None,
) -> FastAPI:
    app = FastAPI(title="dialogtree session service")
    engine = engine or DialogEngine(graph, nlu)
    store = SessionStore(idle_timeout)
    app.state.store = store
    app.state.engine = engine

    def get_record(session_id: str) -> SessionRecord:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown or expired session")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/api/ratings")
    def submit_rating(body: dict) -> dict:
        # accepted and discarded: study tooling is out of scope, but the chat
        # client's post-dialog widget needs somewhere harmless to write
        logger.info("rating received: %s", body)
        return {"recorded": False}

    @app.get("/api/graph/meta")
    def graph_meta() -> dict:
        return {
            "node_count": len(graph.nodes),
            "tree_depth": tree_depth(graph),
            "name": graph.name,
        }

    @app.post("/api/sessions", status_code=201)
    def create_session() -> dict:
        state, action = engine.start_session()
        session_id = store.create(state)
        return {
            "session_id": session_id,
            "messages": [_message_payload(action)],
            "done": state.done,
            "awaiting": state.awaiting,
        }

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageIn) -> dict:
        record = get_record(session_id)
        if not body.text.strip():
            raise HTTPException(status_code=422, detail="text must be non-empty")
        with record.lock:
            if body.message_id and body.message_id in record.responses:
                return record.responses[body.message_id]
            state = record.state
            if state.done:
                raise HTTPException(status_code=409, detail="dialog is finished")
            degraded_before = len(state.degraded_events)
            try:
                actions = engine.handle_user_input(state, body.text)
            except (BackendError, ProviderError) as exc:
                logger.error("backend unavailable: %s", exc)
                raise HTTPException(status_code=503, detail="backend unavailable")
            reply = {
                "messages": _visible_messages(actions),
                "done": state.done,
                "degraded": len(state.degraded_events) > degraded_before,
                "awaiting": state.awaiting,
            }
            if body.message_id:
                record.responses[body.message_id] = reply
            return reply

    @app.get("/api/sessions/{session_id}")
    def session_state(session_id: str) -> dict:
        record = get_record(session_id)
        with record.lock:
            state = record.state
            transcript = []
            suggestions: list[str] = []
            for entry in state.action_log:
                if isinstance(entry, UserTurn):
                    transcript.append({"author": "user", "text": entry.text})
                elif entry.kind == ActionKind.ASK:
                    transcript.append(
                        {
                            "author": "system",
                            "text": entry.rendered_text,
                            "node_id": entry.node,
                        }
                    )
                    suggestions = list(entry.suggestions)
            current = graph.nodes[state.current]
            return {
                "session_id": session_id,
                "done": state.done,
                "awaiting": state.awaiting,
                "mode": state.mode.value if state.mode else None,
                "current_node": state.current,
                "current_node_type": current.node_type.value,
                "suggestions": suggestions,
                "transcript": transcript,
            }

    @app.delete("/api/sessions/{session_id}")
    def delete_session(session_id: str) -> dict:
        if not store.delete(session_id):
            raise HTTPException(status_code=404, detail="unknown or expired session")
        return {"ended": True}

    return app


def node_suggestions(graph: DialogGraph, node_id: str) -> list[str]:
    node = graph.nodes[node_id]
    if node.node_type in (NodeType.START, NodeType.QUESTION):
        return [a.intent_text for a in node.answers]
    return []
