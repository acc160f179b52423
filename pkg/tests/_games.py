from collections.abc import Hashable
from typing import Optional

import numpy as np

from swarm_ltl.synthesis import GameStructure

ENV_CHOICES = ("lo", "hi")
_LOSE = "lose"


def random_game(rng: np.random.Generator, n: int, goals: int = 1,
                env_justice: int = 0, deadlock_prob: float = 0.1) -> GameStructure:
    """Random game on positions 0..n-1, all of them initial."""
    env_moves = []
    sys_moves = {}
    for p in range(n):
        if rng.random() < deadlock_prob:
            env_moves.append(())
            continue
        k = int(rng.integers(1, len(ENV_CHOICES) + 1))
        choices = ENV_CHOICES[:k]
        env_moves.append(choices)
        for e in choices:
            targets = rng.choice(n, size=int(rng.integers(0, min(n, 3) + 1)), replace=False)
            sys_moves[(p, e)] = tuple((f"a{m}", int(q)) for m, q in enumerate(sorted(targets)))
    return GameStructure(
        positions=tuple(range(n)), env_moves=tuple(env_moves), sys_moves=sys_moves,
        env_justice=tuple(rng.random(n) < 0.6 for _ in range(env_justice)),
        sys_justice=tuple(rng.random(n) < 0.4 for _ in range(goals)),
        initial=tuple(range(n)))


def _turn_based(game: GameStructure) -> tuple[dict[Hashable, list[Hashable]], set[Hashable]]:
    """Successor lists of the turn-based graph and its env-owned nodes.

    Env nodes are positions, system nodes are (position, env choice). Dead
    ends of either player lead to a losing sink with a self-loop.
    """
    succ: dict[Hashable, list[Hashable]] = {_LOSE: [_LOSE]}
    for p in range(game.n):
        succ[p] = [(p, e) for e in game.env_moves[p]] or [_LOSE]
        for e in game.env_moves[p]:
            succ[(p, e)] = [q for _, q in game.sys_moves.get((p, e), ())] or [_LOSE]
    env_owned = set(range(game.n)) | {_LOSE}
    return succ, env_owned


def _attractor(target: set[Hashable], arena: set[Hashable], mine: set[Hashable],
               succ: dict[Hashable, list[Hashable]]) -> set[Hashable]:
    """Nodes of arena from which the owner of `mine` forces a visit to target."""
    attr = set(target & arena)
    changed = True
    while changed:
        changed = False
        for node in arena - attr:
            moves = [v for v in succ[node] if v in arena]
            if node in mine:
                hit = any(v in attr for v in moves)
            else:
                hit = all(v in attr for v in moves)
            if hit:
                attr.add(node)
                changed = True
    return attr


def buchi_oracle(game: GameStructure, goal: Optional[np.ndarray] = None) -> set[int]:
    """Positions from which the system visits goal infinitely often, by the
    classic attractor iteration on the turn-based graph."""
    if goal is None:
        (goal,) = game.sys_justice
    succ, env_owned = _turn_based(game)
    sys_owned = set(succ) - env_owned
    arena = set(succ)
    while True:
        good = {p for p in range(game.n) if p in arena and goal[p]}
        reach = _attractor(good, arena, sys_owned, succ)
        if reach == arena:
            break
        arena -= _attractor(arena - reach, arena, env_owned, succ)
    return {p for p in range(game.n) if p in arena}
