"""Operator command line: validate, simulate, chat, serve, recall, compare."""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .config import ConfigError, ServiceConfig, build_stack, load_config
from .evaluation import (
    Table2x2,
    aggregate,
    compare_success,
    read_report,
    recall_at_k,
    write_report,
)
from .graph import GraphError, parse_graph, tree_depth, validate_graph
from .policy import DialogEngine, transcript_records, write_transcript
from .retrieval import LexicalEmbeddingProvider
from .simulate import SimConfig, oracle_policy_factory, run_batch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialogtree",
        description="Controllable dialog engine over expert-authored dialog graphs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a graph document")
    p_validate.add_argument("graph")

    p_sim = sub.add_parser("simulate", help="run a simulated dialog batch")
    p_sim.add_argument("graph")
    p_sim.add_argument("--n", type=int, default=500, dest="num_dialogs")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--backend", choices=("oracle", "http-llm"), default="oracle")
    p_sim.add_argument("--out", default="")
    p_sim.add_argument("--transcripts", default="", help="write per-dialog transcripts (JSON lines)")
    p_sim.add_argument("--mode-split", choices=("uniform", "free", "guided"), default="uniform")
    p_sim.add_argument("--patience", type=int, default=3)
    p_sim.add_argument("--turn-cap-multiplier", type=int, default=4)

    p_chat = sub.add_parser("chat", help="interactive terminal session")
    p_chat.add_argument("graph")
    p_chat.add_argument("--backend", choices=("oracle", "http-llm"), default="oracle")

    p_serve = sub.add_parser("serve", help="run the HTTP session service")
    p_serve.add_argument("config", nargs="?", default="")
    p_serve.add_argument("--graph", default=None)
    p_serve.add_argument("--backend", choices=("oracle", "http-llm"), default=None)
    p_serve.add_argument("--listen", default=None)

    p_recall = sub.add_parser("recall", help="pre-filter recall curve over the stored questions")
    p_recall.add_argument("graph")
    p_recall.add_argument("--ks", default="1,3,5,10,15")

    p_compare = sub.add_parser("compare", help="Barnard exact test between two reports")
    p_compare.add_argument("report_a")
    p_compare.add_argument("report_b")
    return parser


def _load_graph(path: str):
    try:
        return parse_graph(Path(path).read_bytes())
    except OSError as exc:
        raise SystemExit(f"cannot read graph {path!r}: {exc}")
    except GraphError as exc:
        lines = "\n".join(f"  error: {v}" for v in exc.violations)
        raise SystemExit(f"graph {path!r} is invalid:\n{lines}")


def cmd_validate(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    diagnostics = validate_graph(graph)
    for diag in diagnostics:
        print(f"warning [{diag.kind}] {diag.message}")
    print(
        f"{args.graph}: {len(graph.nodes)} nodes, tree depth {tree_depth(graph)}, "
        f"{len(diagnostics)} warning(s)"
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    sim_config = SimConfig(
        num_dialogs=args.num_dialogs,
        seed=args.seed,
        patience=args.patience,
        turn_cap_multiplier=args.turn_cap_multiplier,
        mode_split=args.mode_split,
    )
    if args.backend == "oracle":
        factory = oracle_policy_factory(graph)
    else:
        stack = build_stack(
            load_config(overrides={"graph_path": args.graph, "nlu_backend": "http-llm"})
        )
        factory = lambda goal: DialogEngine(graph, stack.nlu)  # noqa: E731
    report = run_batch(graph, factory, sim_config)
    metrics = aggregate(report)
    terminations = Counter(o.termination for o in report.outcomes)
    print(
        f"dialogs={metrics.n_dialogs} success={metrics.success_rate:.2f}% "
        f"len(guided)={metrics.avg_length_guided:.2f} len(free)={metrics.avg_length_free:.2f} "
        f"modeF1={metrics.mode_f1:.3f} degraded={metrics.degraded_rate:.2f}%"
    )
    print("terminations: " + ", ".join(f"{k}={v}" for k, v in sorted(terminations.items())))
    if args.out:
        if args.out.endswith(".csv"):
            write_report(metrics, args.out, "csv")
        else:
            payload = {
                "version": 1,
                "kind": "sim_report",
                "graph": graph.name or args.graph,
                "metrics": asdict(metrics),
                "sim_config": asdict(sim_config),
                "terminations": dict(sorted(terminations.items())),
                "outcomes": [
                    {
                        "goal": o.goal,
                        "success": o.success,
                        "termination": o.termination,
                        "length": o.length,
                        "turns_used": o.turns_used,
                        "true_mode": o.true_mode.value,
                        "predicted_mode": o.predicted_mode.value if o.predicted_mode else None,
                    }
                    for o in report.outcomes
                ],
            }
            Path(args.out).write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        print(f"report written to {args.out}")
    if args.transcripts:
        Path(args.transcripts).write_text("", encoding="utf-8")
        for index, o in enumerate(report.outcomes):
            # fixed timestamp keeps batch artifacts byte-reproducible
            records = transcript_records(o.transcript, session=f"sim-{index}", timestamp=0.0)
            write_transcript(args.transcripts, records)
        print(f"transcripts written to {args.transcripts}")
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    config = load_config(overrides={"graph_path": args.graph, "nlu_backend": args.backend})
    stack = build_stack(config)
    engine = DialogEngine(stack.graph, stack.nlu)
    state, action = engine.start_session()
    _print_actions([action])
    while not state.done:
        try:
            text = input("> ").strip()
        except (EOFError, KeyboardInterrupt):
            print()
            break
        if not text:
            continue
        if text in (":q", ":quit", ":exit"):
            break
        actions = engine.handle_user_input(state, text)
        _print_actions(actions)
    print("[dialog ended]")
    return 0


def _print_actions(actions) -> None:
    for action in actions:
        if action.kind.value != "ASK":
            continue
        print(f"\n{action.rendered_text}")
        if action.suggestions:
            for i, suggestion in enumerate(action.suggestions):
                print(f"  [{i}] {suggestion}")


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    overrides: dict[str, object] = {}
    if args.graph:
        overrides["graph_path"] = args.graph
    if args.backend:
        overrides["nlu_backend"] = args.backend
    if args.listen:
        overrides["listen_address"] = args.listen
    config = load_config(args.config or None, overrides=overrides)
    stack = build_stack(config)
    app = create_app(stack.graph, stack.nlu, idle_timeout=config.session_idle_timeout)
    host, _, port = config.listen_address.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8470))
    return 0


def cmd_recall(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    try:
        ks = sorted({int(k) for k in args.ks.split(",") if k.strip()})
    except ValueError:
        raise SystemExit(f"bad --ks value: {args.ks!r}")
    if not ks:
        raise SystemExit("no k values given")
    question_set = [
        (question, node_id)
        for node_id, questions in sorted(graph.faq.items())
        for question in questions
    ]
    if not question_set:
        raise SystemExit("graph carries no stored user questions")
    curve = recall_at_k(graph, question_set, LexicalEmbeddingProvider(), ks)
    print("k,recall")
    for k, recall in curve:
        print(f"{k},{recall:.4f}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    a = read_report(args.report_a)
    b = read_report(args.report_b)
    table = Table2x2(a.successes, a.n_dialogs, b.successes, b.n_dialogs)
    result = compare_success(table)
    higher = args.report_a if result.direction == "a" else args.report_b
    print(
        f"success A: {a.successes}/{a.n_dialogs} ({result.proportion_a:.2%})  "
        f"success B: {b.successes}/{b.n_dialogs} ({result.proportion_b:.2%})"
    )
    print(
        f"one-sided Barnard exact p = {result.p_value:.6g} "
        f"(variant={result.variant}, grid step={result.grid_step}, "
        f"favoring {higher})"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "chat": cmd_chat,
        "serve": cmd_serve,
        "recall": cmd_recall,
        "compare": cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except SystemExit:
        raise
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # no stack dumps at the CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
