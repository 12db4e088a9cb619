"""Path planning over dialog graphs.

The planner enumerates simple paths to candidate goal nodes and picks the
longest path prefix shared by at least one path to every goal. The last node
of that prefix is where remaining candidates diverge, i.e. the next point
where the user must be consulted (or a goal itself).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .graph import DialogGraph, NodeType, tree_depth

logger = logging.getLogger(__name__)

Path = tuple[str, ...]


class PlanningError(Exception):
    pass


class NoGoalsError(PlanningError):
    pass


class UnreachableGoalError(PlanningError):
    def __init__(self, goal: str):
        super().__init__(f"goal {goal!r} is unreachable from the planning origin")
        self.goal = goal


class VariableSourceNotFoundError(LookupError):
    def __init__(self, name: str):
        super().__init__(f"no visited variable node declares {name!r}")
        self.name = name


@dataclass(frozen=True)
class PlanConfig:
    """Caps that keep enumeration finite on cyclic graphs.

    max_path_length counts edges; None means 4 x tree depth of the graph.
    """

    max_paths_per_goal: int = 256
    max_path_length: int | None = None

    def __post_init__(self) -> None:
        if self.max_paths_per_goal < 1:
            raise ValueError("max_paths_per_goal must be >= 1")
        if self.max_path_length is not None and self.max_path_length < 1:
            raise ValueError("max_path_length must be >= 1")

    def resolved_max_length(self, graph: DialogGraph) -> int:
        if self.max_path_length is not None:
            return self.max_path_length
        return max(1, 4 * tree_depth(graph))


@dataclass(frozen=True)
class PathSet:
    paths: tuple[Path, ...]
    truncated: bool


def enumerate_paths(
    graph: DialogGraph,
    origin: str,
    goal: str,
    config: PlanConfig | None = None,
) -> PathSet:
    """All simple paths origin -> goal, depth-first in authored neighbor order.

    Enumeration stops once a cap bites; `truncated` records that.
    """
    if origin not in graph.nodes:
        raise KeyError(origin)
    if goal not in graph.nodes:
        raise KeyError(goal)
    config = config or PlanConfig()
    max_len = config.resolved_max_length(graph)
    max_paths = config.max_paths_per_goal

    paths: list[Path] = []
    truncated = False
    stack: list[str] = [origin]
    on_path = {origin}

    def dfs(node_id: str) -> bool:
        """Returns False when enumeration should stop entirely."""
        nonlocal truncated
        if node_id == goal:
            paths.append(tuple(stack))
            if len(paths) >= max_paths:
                truncated = True
                return False
            return True
        if len(stack) - 1 >= max_len:
            truncated = True
            return True
        for succ in graph.successors(node_id):
            if succ in on_path:
                continue
            stack.append(succ)
            on_path.add(succ)
            keep_going = dfs(succ)
            stack.pop()
            on_path.remove(succ)
            if not keep_going:
                return False
        return True

    dfs(origin)
    return PathSet(tuple(paths), truncated)


def longest_shared_prefix(
    graph: DialogGraph,
    origin: str,
    goals: set[str] | frozenset[str],
    config: PlanConfig | None = None,
) -> Path:
    """Longest node sequence from origin that prefixes a path to every goal.

    Ties between equal-length prefixes are broken by authored neighbor order
    at the first divergence, making the result deterministic.
    """
    if not goals:
        raise NoGoalsError("goal set is empty")
    config = config or PlanConfig()

    prefix_sets: list[set[Path]] = []
    for goal in sorted(goals):
        path_set = enumerate_paths(graph, origin, goal, config)
        if not path_set.paths:
            raise UnreachableGoalError(goal)
        if path_set.truncated:
            logger.warning(
                "path enumeration to %r truncated by caps; prefix may be conservative",
                goal,
            )
        prefixes: set[Path] = set()
        for path in path_set.paths:
            for end in range(1, len(path) + 1):
                prefixes.add(path[:end])
        prefix_sets.append(prefixes)

    def shared(prefix: Path) -> bool:
        return all(prefix in s for s in prefix_sets)

    best: Path = (origin,)

    def extend(prefix: Path) -> Path:
        longest = prefix
        for succ in graph.successors(prefix[-1]):
            if succ in prefix:
                continue
            candidate = prefix + (succ,)
            if not shared(candidate):
                continue
            result = extend(candidate)
            if len(result) > len(longest):
                longest = result
        return longest

    if not shared(best):
        # origin is on every path by construction (paths start at origin)
        raise UnreachableGoalError(next(iter(goals)))
    return extend(best)


def find_variable_source(
    history: list[str] | tuple[str, ...],
    graph: DialogGraph,
    name: str,
) -> str:
    """Most recently visited variable node declaring `name`."""
    for node_id in reversed(history):
        node = graph.nodes.get(node_id)
        if (
            node is not None
            and node.node_type == NodeType.VARIABLE
            and node.variable is not None
            and node.variable.name == name
        ):
            return node_id
    raise VariableSourceNotFoundError(name)
