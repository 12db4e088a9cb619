from __future__ import annotations

import json
from importlib import resources

import pytest

from dialogtree.graph import DialogGraph, parse_graph


def mini_domain_text() -> str:
    ref = resources.files("dialogtree").joinpath("assets", "mini_travel.json")
    return ref.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def mini_graph() -> DialogGraph:
    return parse_graph(mini_domain_text())


@pytest.fixture()
def mini_graph_path(tmp_path) -> str:
    path = tmp_path / "mini_travel.json"
    path.write_text(mini_domain_text(), encoding="utf-8")
    return str(path)


def make_graph(
    nodes: list[dict],
    start: str = "s",
    faq: dict | None = None,
    paraphrases: dict | None = None,
) -> DialogGraph:
    """Build a graph through the parser so schema invariants stay enforced."""
    document = {
        "version": 1,
        "start": start,
        "nodes": nodes,
        "faq": faq or {},
        "paraphrases": paraphrases or {},
    }
    return parse_graph(json.dumps(document))


def q(node_id: str, targets: list[str], text: str = "", start: bool = False) -> dict:
    """Question/start node with one answer per target."""
    return {
        "id": node_id,
        "type": "start" if start else "question",
        "text": text or f"question at {node_id}?",
        "answers": [
            {
                "id": f"{node_id}->{t}",
                "intent_text": f"go to {t}",
                "target": t,
            }
            for t in targets
        ],
    }


def info(node_id: str, next_id: str | None = None, text: str = "") -> dict:
    return {
        "id": node_id,
        "type": "information",
        "text": text or f"information at {node_id}.",
        "next": next_id,
    }
