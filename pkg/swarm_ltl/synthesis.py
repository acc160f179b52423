"""GR(1) games over the DFTS, the nested fixpoint solver and Mealy strategy extraction.

Turn order within a symbolic step: the environment reveals its next valuation,
then the system picks an action. Position sets are dense boolean masks.
"""

import itertools
import json
import logging
from collections import deque
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .abstraction import Action, Dfts, State, successors
from .config import check
from .spec import Gr1Spec, PropFormula, assignment, eval_prop
from .types import StrategyFile, Valuation
from .world import REGION_LABELS

logger = logging.getLogger(__name__)

Mask = NDArray[np.bool_]


class SynthesisError(Exception):
    """The specification is unrealizable from an initial position."""

    def __init__(self, message: str, position: Optional[Hashable] = None):
        super().__init__(message)
        self.position = position


class StrategyError(ValueError):
    """A strategy does not match the abstraction or environment it is used with."""


def _index_array(values: Iterable[int]) -> NDArray[np.intp]:
    return np.fromiter(values, dtype=np.intp)


@dataclass(frozen=True, eq=False)
class GameStructure:
    """Explicit two-player game.

    env_moves[p] lists the env choices at position p, sys_moves[(p, e)] the
    system's (action, target position index) responses to choice e.
    """

    positions: tuple[Hashable, ...]
    env_moves: tuple[tuple[Hashable, ...], ...]
    sys_moves: Mapping[tuple[int, Hashable], tuple[tuple[Hashable, int], ...]]
    env_justice: tuple[Mask, ...] = ()
    sys_justice: tuple[Mask, ...] = ()
    initial: tuple[int, ...] = ()
    safe: Optional[Mask] = None
    sys_init: Optional[Mask] = None

    group_pos: NDArray[np.intp] = field(init=False, repr=False)
    edge_group: NDArray[np.intp] = field(init=False, repr=False)
    edge_target: NDArray[np.intp] = field(init=False, repr=False)
    has_env_move: Mask = field(init=False, repr=False)
    _index: Mapping[Hashable, int] = field(init=False, repr=False)
    _groups: Mapping[tuple[int, Hashable], int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.positions)
        if len(self.env_moves) != n:
            raise ValueError("env_moves needs one entry per position")
        index = {key: p for p, key in enumerate(self.positions)}
        if len(index) != n:
            raise ValueError("Game positions must be unique")

        def as_mask(m: Optional[Mask], default: bool) -> Mask:
            arr = np.full(n, default) if m is None else np.asarray(m, dtype=bool)
            if arr.shape != (n,):
                raise ValueError(f"Position predicate has shape {arr.shape}, expected ({n},)")
            arr = arr.copy()
            arr.setflags(write=False)
            return arr

        object.__setattr__(self, "env_justice", tuple(as_mask(m, True) for m in self.env_justice)
                           or (as_mask(None, True),))
        object.__setattr__(self, "sys_justice", tuple(as_mask(m, True) for m in self.sys_justice))
        object.__setattr__(self, "safe", as_mask(self.safe, True))
        object.__setattr__(self, "sys_init", as_mask(self.sys_init, True))
        if any(not 0 <= p < n for p in self.initial):
            raise ValueError("Initial positions out of range")

        groups = {}
        group_pos = []
        edge_group = []
        edge_target = []
        for p, choices in enumerate(self.env_moves):
            for e in choices:
                g = groups.setdefault((p, e), len(groups))
                group_pos.append(p)
                for _, q in self.sys_moves.get((p, e), ()):
                    if not 0 <= q < n:
                        raise ValueError(f"Move target {q} out of range")
                    edge_group.append(g)
                    edge_target.append(q)
        if len(groups) != len(group_pos):
            raise ValueError("Duplicate env choice at a position")
        object.__setattr__(self, "sys_moves", MappingProxyType(dict(self.sys_moves)))
        object.__setattr__(self, "group_pos", _index_array(group_pos))
        object.__setattr__(self, "edge_group", _index_array(edge_group))
        object.__setattr__(self, "edge_target", _index_array(edge_target))
        object.__setattr__(self, "has_env_move", np.bincount(self.group_pos, minlength=n) > 0)
        object.__setattr__(self, "_index", MappingProxyType(index))
        object.__setattr__(self, "_groups", MappingProxyType(groups))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def goals(self) -> tuple[Mask, ...]:
        """System justice, with an empty list read as [true]."""
        return self.sys_justice or (np.ones(self.n, dtype=bool),)

    def index(self, key: Hashable) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise KeyError(f"Unknown game position: {key}") from None

    def mask(self, keys: Iterable[Hashable]) -> Mask:
        m = np.zeros(self.n, dtype=bool)
        m[[self.index(k) for k in keys]] = True
        return m

    def members(self, mask: Mask) -> set[Hashable]:
        return {self.positions[p] for p in np.flatnonzero(mask)}

    def responses(self, p: int, env: Hashable) -> tuple[tuple[Hashable, int], ...]:
        if (p, env) not in self._groups:
            raise KeyError(f"{env!r} is not an env move at {self.positions[p]}")
        return self.sys_moves.get((p, env), ())


def env_valuations(env_vars: Sequence[str]) -> list[Valuation]:
    """All valuations, variable k true in valuation number m iff bit k of m is set."""
    return [frozenset(v for k, v in enumerate(env_vars) if m >> k & 1)
            for m in range(2 ** len(env_vars))]


def build_game(dfts: Dfts, spec: Gr1Spec,
               universe: Optional[Iterable[str]] = None) -> GameStructure:
    """Product of the DFTS with the env valuations, positions keyed (state, valuation)."""
    if universe is None:
        universe = REGION_LABELS.union(*dfts.labels.values())
    universe = frozenset(universe) | frozenset(spec.env_vars)
    spec.check_universe(universe)
    env_universe = frozenset(spec.env_vars)
    valuations = env_valuations(spec.env_vars)
    positions = [(s, e) for s in dfts.states for e in valuations]
    index = {key: p for p, key in enumerate(positions)}

    def holds(f: PropFormula, true: frozenset[str], nxt: Optional[Valuation] = None) -> bool:
        current = assignment(true, universe)
        return eval_prop(f, current, None if nxt is None else assignment(nxt, env_universe))

    def all_hold(fs: Sequence[PropFormula], true: frozenset[str],
                 nxt: Optional[Valuation] = None) -> bool:
        return all(holds(f, true, nxt) for f in fs)

    pos_labels = [dfts.labels[s] | e for s, e in positions]
    safe = np.array([all_hold(spec.sys_safety, lab) for lab in pos_labels])
    succ = {s: successors(dfts, s) for s in dfts.states}

    env_moves = []
    sys_moves = {}
    for p, (s, e) in enumerate(positions):
        lab = pos_labels[p]
        allowed = tuple(e2 for e2 in valuations if all_hold(spec.env_safety, lab, e2))
        env_moves.append(allowed)
        for e2 in allowed:
            sys_moves[(p, e2)] = tuple((a, index[(t, e2)]) for a, t in succ[s]
                                       if safe[index[(t, e2)]])

    def predicate(f: PropFormula) -> Mask:
        return np.array([holds(f, lab) for lab in pos_labels])

    initial = tuple(index[(dfts.initial, e)] for e in valuations
                    if holds(spec.env_init, dfts.labels[dfts.initial] | e))
    game = GameStructure(
        positions=tuple(positions), env_moves=tuple(env_moves), sys_moves=sys_moves,
        env_justice=tuple(predicate(f) for f in spec.env_justice),
        sys_justice=tuple(predicate(f) for f in spec.sys_justice),
        initial=initial, safe=safe, sys_init=predicate(spec.sys_init))
    blocked = int(np.count_nonzero(~game.has_env_move))
    if blocked:
        logger.warning("Environment assumptions block at %d of %d positions", blocked, game.n)
    logger.info("Built game: %d positions, %d env moves, %d system moves, %d initial",
                game.n, len(game.group_pos), len(game.edge_target), len(initial))
    return game


def cpre(game: GameStructure, target: Mask) -> Mask:
    """Positions where every env move has a system response landing in target."""
    target = np.asarray(target, dtype=bool)
    if target.shape != (game.n,):
        raise ValueError(f"Target mask has shape {target.shape}, expected ({game.n},)")
    answered = np.zeros(len(game.group_pos), dtype=bool)
    np.logical_or.at(answered, game.edge_group, target[game.edge_target])
    result = game.has_env_move.copy()
    np.logical_and.at(result, game.group_pos, answered)
    return result


@dataclass(frozen=True, eq=False)
class GoalLayers:
    """Onion rings toward one system goal.

    y[r] is the r-th least-fixpoint iterate (y[0] empty), x[r][i] the waiting
    set for env justice i inside ring r, start = goal & cpre(Z).
    """

    start: Mask
    y: tuple[Mask, ...]
    x: tuple[tuple[Mask, ...], ...]

    def rank(self) -> NDArray[np.int64]:
        """First ring containing each position, -1 outside the final ring."""
        rank = np.full(self.start.shape, -1, dtype=np.int64)
        for r in range(len(self.y) - 1, 0, -1):
            rank[self.y[r]] = r
        return rank


def _wait_fixpoint(game: GameStructure, start: Mask, avoid: Mask) -> Mask:
    x = np.ones(game.n, dtype=bool)
    while True:
        x_next = start | (avoid & cpre(game, x))
        if np.array_equal(x_next, x):
            return x
        x = x_next


def _goal_layers(game: GameStructure, z: Mask, goal: Mask) -> GoalLayers:
    start = goal & cpre(game, z)
    y = np.zeros(game.n, dtype=bool)
    ys = [y]
    xs: list[tuple[Mask, ...]] = [()]
    while True:
        ring_start = start | cpre(game, y)
        x_ring = tuple(_wait_fixpoint(game, ring_start, ~je) for je in game.env_justice)
        y_next = np.logical_or.reduce(x_ring)
        if np.array_equal(y_next, y):
            return GoalLayers(start, tuple(ys), tuple(xs))
        ys.append(y_next)
        xs.append(x_ring)
        y = y_next


def solve_gr1(game: GameStructure) -> tuple[Mask, tuple[GoalLayers, ...]]:
    """Winning region Z and, per system goal, the rings computed at Z."""
    z = np.ones(game.n, dtype=bool)
    for iteration in itertools.count(1):
        layers = tuple(_goal_layers(game, z, goal) for goal in game.goals)
        z_next = np.logical_and.reduce([lay.y[-1] for lay in layers])
        if np.array_equal(z_next, z):
            logger.info("GR(1) fixpoint reached after %d outer iterations, %d/%d positions winning",
                        iteration, int(np.count_nonzero(z)), game.n)
            return z, layers
        z = z_next
    raise AssertionError("unreachable")


class Node(NamedTuple):
    position: Hashable
    goal: int


@dataclass(frozen=True, eq=False)
class Strategy:
    """Finite-memory Mealy controller: memory is the goal being pursued."""

    nodes: tuple[Node, ...]
    initial: tuple[int, ...]
    transitions: Mapping[tuple[int, Hashable], tuple[Hashable, int]]
    goals: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", MappingProxyType(dict(self.transitions)))
        n = len(self.nodes)
        if any(not 0 <= i < n for i in self.initial):
            raise StrategyError("Initial node out of range")
        for (i, _), (_, j) in self.transitions.items():
            if not (0 <= i < n and 0 <= j < n):
                raise StrategyError(f"Transition {i} -> {j} leaves the node set")
        if any(not 0 <= node.goal < self.goals for node in self.nodes):
            raise StrategyError("Goal index out of range")

    @property
    def initial_nodes(self) -> tuple[Node, ...]:
        return tuple(self.nodes[i] for i in self.initial)

    def start(self, position: Hashable) -> int:
        """Initial node for an initial position."""
        for i in self.initial:
            if self.nodes[i].position == position:
                return i
        raise StrategyError(f"No initial node for position {position}")

    def move(self, node: int, env: Hashable) -> tuple[Hashable, int]:
        try:
            return self.transitions[(node, env)]
        except KeyError:
            raise StrategyError(
                f"Strategy has no move at node {node} {self.nodes[node]} for env {env!r}"
            ) from None


def _advance(goals: Sequence[Mask], p: int, j: int) -> int:
    for _ in range(len(goals)):
        if not goals[j][p]:
            return j
        j = (j + 1) % len(goals)
    return j


def extract_strategy(game: GameStructure, winning: Mask, layers: Sequence[GoalLayers],
                     initial: Optional[Iterable[int]] = None) -> Strategy:
    """Round-robin goal memory, lowest action index on ties."""
    goals = game.goals
    if initial is None:
        initial = game.initial
    initial = tuple(initial)
    for p in initial:
        if not (winning[p] and game.safe[p] and game.sys_init[p]):
            raise SynthesisError(f"Initial position {game.positions[p]} is not winning",
                                 game.positions[p])
    ranks = [lay.rank() for lay in layers]

    def choose(p: int, j: int, responses: Sequence[tuple[Hashable, int]]) -> tuple[Hashable, int]:
        lay, r = layers[j], ranks[j][p]
        preferred: list[Mask] = []
        if not goals[j][p] and r > 0:
            preferred.append(lay.start)
            preferred.append(lay.y[r - 1])
            for x in lay.x[r]:
                if x[p]:
                    preferred.append(x)
                    break
        preferred.append(winning)
        for target in preferred:
            for a, q in responses:
                if target[q]:
                    return a, q
        raise SynthesisError(f"No winning response at {game.positions[p]}", game.positions[p])

    nodes: list[Node] = []
    node_index: dict[tuple[int, int], int] = {}
    queue: deque[tuple[int, int]] = deque()

    def node_for(p: int, j: int) -> int:
        key = (p, _advance(goals, p, j))
        if key not in node_index:
            node_index[key] = len(nodes)
            nodes.append(Node(game.positions[p], key[1]))
            queue.append(key)
        return node_index[key]

    initial_nodes = tuple(node_for(p, 0) for p in initial)
    transitions = {}
    while queue:
        p, j = queue.popleft()
        i = node_index[(p, j)]
        for e in game.env_moves[p]:
            a, q = choose(p, j, game.responses(p, e))
            transitions[(i, e)] = (a, node_for(q, j))

    strategy = Strategy(tuple(nodes), initial_nodes, transitions, len(goals))
    logger.info("Extracted strategy: %d nodes, %d transitions", len(nodes), len(transitions))
    return strategy


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    reachable_nodes: int
    reason: Optional[str] = None
    # Counterexample: stem from an initial node, then a cycle repeated forever.
    stem: tuple[int, ...] = ()
    cycle: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, object]:
        return {"passed": self.passed, "reachable_nodes": self.reachable_nodes,
                "reason": self.reason, "stem": list(self.stem), "cycle": list(self.cycle)}


def _path(graph: csr_matrix, src: int, dst: int) -> list[int]:
    """Shortest path src -> dst (both included) inside graph."""
    if src == dst:
        return [src]
    _, pred = breadth_first_order(graph, src, directed=True, return_predecessors=True)
    if pred[dst] < 0:
        raise ValueError(f"{dst} is not reachable from {src}")
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def verify_strategy(game: GameStructure, strategy: Strategy) -> VerificationReport:
    """Exhaustive check of safety, totality and the GR(1) liveness condition."""
    n = len(strategy.nodes)
    node_pos = [game.index(node.position) for node in strategy.nodes]

    missing = [p for p in game.initial if p not in {node_pos[i] for i in strategy.initial}]
    if missing:
        return VerificationReport(False, 0, f"No initial node for {game.positions[missing[0]]}")

    if not strategy.initial:
        return VerificationReport(True, 0)
    # One extra source node feeding every initial node.
    edges = {(n, i) for i in strategy.initial}
    edges.update((i, j) for (i, _), (_, j) in strategy.transitions.items())
    src, dst = zip(*edges)
    graph = csr_matrix((np.ones(len(src)), (src, dst)), shape=(n + 1, n + 1))
    order, pred = breadth_first_order(graph, n, directed=True, return_predecessors=True)
    reachable = np.zeros(n, dtype=bool)
    reachable[order[order < n]] = True
    count = int(np.count_nonzero(reachable))

    def stem_to(i: int) -> tuple[int, ...]:
        path = [i]
        while pred[path[-1]] != n:
            path.append(int(pred[path[-1]]))
        return tuple(path[::-1])

    for i in np.flatnonzero(reachable):
        p = node_pos[i]
        if not game.safe[p]:
            return VerificationReport(False, count, f"Safety violated at {strategy.nodes[i]}",
                                      stem_to(i))
        if not game.has_env_move[p]:
            return VerificationReport(False, count, f"Env has no move at {strategy.nodes[i]}",
                                      stem_to(i))
        for e in game.env_moves[p]:
            if (i, e) not in strategy.transitions:
                return VerificationReport(False, count,
                                          f"No move at {strategy.nodes[i]} for env {e!r}",
                                          stem_to(i))
            a, j = strategy.transitions[(i, e)]
            if (a, node_pos[j]) not in game.responses(p, e):
                return VerificationReport(False, count,
                                          f"Move {a} at {strategy.nodes[i]} is not a legal response",
                                          stem_to(i))

    for j, goal in enumerate(game.sys_justice):
        keep = np.flatnonzero(reachable & ~goal[node_pos])
        if keep.size == 0:
            continue
        sub = graph[keep][:, keep]
        n_comp, comp = connected_components(sub, directed=True, connection="strong")
        sizes = np.bincount(comp, minlength=n_comp)
        loops = sub.diagonal() > 0
        for c in range(n_comp):
            members = np.flatnonzero(comp == c)
            if sizes[c] == 1 and not loops[members[0]]:
                continue
            witnesses = []
            for je in game.env_justice:
                hits = [k for k in members if je[node_pos[keep[k]]]]
                if not hits:
                    break
                witnesses.append(hits[0])
            else:
                comp_graph = sub[members][:, members]
                local = {int(k): m for m, k in enumerate(members)}
                anchor = local[witnesses[0]]
                cycle = [anchor]
                for w in [local[k] for k in witnesses[1:]] + [anchor]:
                    cycle.extend(_path(comp_graph, cycle[-1], w)[1:])
                if len(cycle) == 1:
                    nxt = int(comp_graph[anchor].indices[0])
                    cycle.extend(_path(comp_graph, nxt, anchor))
                cycle_nodes = tuple(int(keep[members[m]]) for m in cycle[:-1])
                stem = stem_to(cycle_nodes[0])
                return VerificationReport(False, count, f"Cycle never reaching system goal {j}",
                                          stem[:-1], cycle_nodes)

    logger.info("Strategy verified: %d reachable nodes", count)
    return VerificationReport(True, count)


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    game: GameStructure
    winning: Mask
    strategy: Optional[Strategy]
    report: Optional[VerificationReport]

    @property
    def realizable(self) -> bool:
        return self.strategy is not None

    def to_dict(self) -> dict[str, object]:
        return {"realizable": self.realizable, "positions": self.game.n,
                "winning": int(np.count_nonzero(self.winning)),
                "initial": [str(self.game.positions[p]) for p in self.game.initial],
                "nodes": len(self.strategy.nodes) if self.strategy else 0,
                "verification": self.report.to_dict() if self.report else None}


def synthesize(dfts: Dfts, spec: Gr1Spec, universe: Optional[Iterable[str]] = None,
               *, verify: bool = True) -> SynthesisResult:
    """build_game, solve_gr1, extract_strategy and (optionally) verify_strategy."""
    game = build_game(dfts, spec, universe)
    winning, layers = solve_gr1(game)
    try:
        strategy = extract_strategy(game, winning, layers)
    except SynthesisError as e:
        logger.warning("Unrealizable: %s", e)
        return SynthesisResult(game, winning, None, None)
    report = verify_strategy(game, strategy) if verify else None
    if report is not None and not report.passed:
        logger.error("Extracted strategy failed verification: %s", report.reason)
    return SynthesisResult(game, winning, strategy, report)


def _action_entry(a: Action) -> dict[str, Optional[str]]:
    return {"move": a.move, "switch": a.switch}


def strategy_to_dict(strategy: Strategy, env_vars: Sequence[str]) -> StrategyFile:
    nodes = []
    for node in strategy.nodes:
        state, env = node.position  # type: ignore[misc]
        nodes.append({"cell": state.cell, "formation": state.formation,
                      "env": sorted(env), "goal": node.goal})
    return {
        "env_vars": list(env_vars), "goals": strategy.goals, "nodes": nodes,
        "initial": list(strategy.initial),
        "transitions": [{"node": i, "env": sorted(e), "action": _action_entry(a), "next": j}
                        for (i, e), (a, j) in strategy.transitions.items()]}


def strategy_from_dict(raw: object, dfts: Dfts) -> Strategy:
    """Load a strategy and check every transition against the DFTS."""
    data = check(StrategyFile, raw)
    env_vars = frozenset(data["env_vars"])
    nodes = []
    for entry in data["nodes"]:
        state = State(tuple(entry["cell"]), entry["formation"])  # type: ignore[arg-type]
        if state not in dfts:
            raise StrategyError(f"Strategy node {state} is not a DFTS state")
        env = frozenset(entry["env"])
        if not env <= env_vars:
            raise StrategyError(f"Unknown env variables in node: {sorted(env - env_vars)}")
        nodes.append(Node((state, env), entry["goal"]))

    transitions = {}
    for t in data["transitions"]:
        i, j = t["node"], t["next"]
        if not (0 <= i < len(nodes) and 0 <= j < len(nodes)):
            raise StrategyError(f"Transition {i} -> {j} leaves the node set")
        action = Action(t["action"]["move"], t["action"]["switch"])
        env = frozenset(t["env"])
        state, _ = nodes[i].position  # type: ignore[misc]
        if (dfts.step(state, action), env) != nodes[j].position:
            raise StrategyError(f"Transition {i} --{action}--> {j} disagrees with the DFTS")
        transitions[(i, env)] = (action, j)
    return Strategy(tuple(nodes), tuple(data["initial"]), transitions, data["goals"])


def save_strategy(strategy: Strategy, env_vars: Sequence[str], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(strategy_to_dict(strategy, env_vars), indent=1))


def load_strategy(path: Union[str, Path], dfts: Dfts) -> Strategy:
    return strategy_from_dict(json.loads(Path(path).read_text()), dfts)

