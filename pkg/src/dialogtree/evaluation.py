"""Objective metrics, retrieval recall curves, and the Barnard exact test.

Dialog length counts only what the user perceives (ASKs and user inputs);
mode F1 treats free mode as the positive class. Success proportions from two
report files are compared with a one-sided exact unconditional test.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import binom

from .graph import DialogGraph
from .nlu import ModeLabel
from .retrieval import EmbeddingProvider, RetrievalConfig, Retriever
from .simulate import SimReport

logger = logging.getLogger(__name__)

BARNARD_VARIANT = "wald-unpooled"
BARNARD_GRID_STEP = 0.001

METRICS_FIELDS = (
    "success_rate",
    "avg_length_guided",
    "avg_length_free",
    "mode_f1",
    "degraded_rate",
    "n_dialogs",
    "successes",
)


class EmptyReportError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    success_rate: float  # percentage, 0..100
    avg_length_guided: float
    avg_length_free: float
    mode_f1: float
    degraded_rate: float  # percentage of dialogs with an engine fallback
    n_dialogs: int
    successes: int


@dataclass(frozen=True)
class Table2x2:
    successes_a: int
    trials_a: int
    successes_b: int
    trials_b: int

    def __post_init__(self) -> None:
        if self.trials_a < 1 or self.trials_b < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.successes_a <= self.trials_a:
            raise ValueError("successes_a out of range")
        if not 0 <= self.successes_b <= self.trials_b:
            raise ValueError("successes_b out of range")


def aggregate(report: SimReport) -> Metrics:
    """Batch aggregates; lengths are averaged per true interaction mode."""
    outcomes = report.outcomes
    if not outcomes:
        raise EmptyReportError("report has no outcomes")
    n = len(outcomes)
    successes = sum(1 for o in outcomes if o.success)

    guided_lengths = [o.length for o in outcomes if o.true_mode == ModeLabel.GUIDED]
    free_lengths = [o.length for o in outcomes if o.true_mode == ModeLabel.FREE]

    tp = fp = fn = 0
    for o in outcomes:
        if o.predicted_mode is None:
            continue
        if o.true_mode == ModeLabel.FREE and o.predicted_mode == ModeLabel.FREE:
            tp += 1
        elif o.true_mode != ModeLabel.FREE and o.predicted_mode == ModeLabel.FREE:
            fp += 1
        elif o.true_mode == ModeLabel.FREE and o.predicted_mode != ModeLabel.FREE:
            fn += 1
    if tp + fp + fn == 0:
        f1 = 1.0  # nothing to misclassify
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)

    degraded = sum(1 for o in outcomes if o.degraded_events)
    return Metrics(
        success_rate=100.0 * successes / n,
        avg_length_guided=_mean(guided_lengths),
        avg_length_free=_mean(free_lengths),
        mode_f1=f1,
        degraded_rate=100.0 * degraded / n,
        n_dialogs=n,
        successes=successes,
    )


def _mean(values: list[int]) -> float:
    return sum(values) / len(values) if values else 0.0


def recall_at_k(
    graph: DialogGraph,
    question_set: list[tuple[str, str]],
    provider: EmbeddingProvider,
    ks: list[int],
) -> list[tuple[int, float]]:
    """For each k: fraction of questions whose answer node ranks in the top k."""
    if not question_set:
        return [(k, 0.0) for k in ks]
    for _, node_id in question_set:
        if node_id not in graph.nodes:
            raise KeyError(node_id)
    retriever = Retriever(graph, provider, RetrievalConfig(k=max(len(graph.nodes), 1)))
    ranks: list[int | None] = []
    for question, node_id in question_set:
        scored = retriever.prefilter(question)
        rank = next((c.rank for c in scored if c.node_id == node_id), None)
        ranks.append(rank)
    curve = []
    for k in ks:
        hits = sum(1 for r in ranks if r is not None and r <= k)
        curve.append((k, hits / len(question_set)))
    return curve


def _wald_statistic_matrix(trials_a: int, trials_b: int) -> np.ndarray:
    """Unpooled Wald statistic for every outcome table (xa, xb)."""
    pa = np.arange(trials_a + 1) / trials_a
    pb = np.arange(trials_b + 1) / trials_b
    diff = pa[:, None] - pb[None, :]
    var = (pa * (1 - pa) / trials_a)[:, None] + (pb * (1 - pb) / trials_b)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = diff / np.sqrt(var)
    degenerate = var == 0
    stat = np.where(
        degenerate,
        np.where(diff > 0, np.inf, np.where(diff < 0, -np.inf, 0.0)),
        stat,
    )
    return stat


def barnard_exact(table: Table2x2, grid_step: float = BARNARD_GRID_STEP) -> float:
    """One-sided exact unconditional p-value for H1: p_a > p_b.

    Tables at least as extreme as the observed one (Wald statistic >=
    observed) are summed under a common success probability, maximized over
    a dense nuisance grid with endpoints included.
    """
    na, nb = table.trials_a, table.trials_b
    stat = _wald_statistic_matrix(na, nb)
    observed = stat[table.successes_a, table.successes_b]
    extreme = (stat >= observed).astype(float)

    n_points = int(round(1.0 / grid_step)) + 1
    grid = np.linspace(0.0, 1.0, n_points)
    pmf_a = binom.pmf(np.arange(na + 1)[None, :], na, grid[:, None])
    pmf_b = binom.pmf(np.arange(nb + 1)[None, :], nb, grid[:, None])
    tail = np.einsum("gi,ij,gj->g", pmf_a, extreme, pmf_b)
    return float(min(tail.max(), 1.0))  # float sums can overshoot 1 by an ulp


@dataclass(frozen=True)
class Comparison:
    p_value: float
    direction: str  # "a" or "b": which side has the higher success proportion
    proportion_a: float
    proportion_b: float
    variant: str = BARNARD_VARIANT
    grid_step: float = BARNARD_GRID_STEP


def compare_success(table: Table2x2) -> Comparison:
    """One-sided Barnard test in the direction of the observed difference."""
    pa = table.successes_a / table.trials_a
    pb = table.successes_b / table.trials_b
    if pa >= pb:
        p = barnard_exact(table)
        direction = "a"
    else:
        p = barnard_exact(
            Table2x2(table.successes_b, table.trials_b, table.successes_a, table.trials_a)
        )
        direction = "b"
    return Comparison(p, direction, pa, pb)


def write_report(metrics: Metrics, path: str, format: str = "json") -> None:
    """Deterministic serialization; json and csv round-trip via read_report."""
    if format == "json":
        payload = {"version": 1, "kind": "metrics", "metrics": asdict(metrics)}
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(METRICS_FIELDS)
            writer.writerow([repr(getattr(metrics, f)) for f in METRICS_FIELDS])
    else:
        raise ValueError(f"unknown report format: {format!r}")


def read_report(path: str) -> Metrics:
    with open(path, encoding="utf-8") as handle:
        content = handle.read()
    stripped = content.lstrip()
    if stripped.startswith("{"):
        payload = json.loads(content)
        return Metrics(**payload["metrics"])
    rows = list(csv.reader(content.splitlines()))
    if len(rows) < 2 or tuple(rows[0]) != METRICS_FIELDS:
        raise ValueError(f"not a metrics report: {path}")
    values = dict(zip(METRICS_FIELDS, rows[1]))
    return Metrics(
        success_rate=float(values["success_rate"]),
        avg_length_guided=float(values["avg_length_guided"]),
        avg_length_free=float(values["avg_length_free"]),
        mode_f1=float(values["mode_f1"]),
        degraded_rate=float(values["degraded_rate"]),
        n_dialogs=int(values["n_dialogs"]),
        successes=int(values["successes"]),
    )
