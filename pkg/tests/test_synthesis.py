import dataclasses
import json
from collections.abc import Callable, Hashable
from pathlib import Path

import numpy as np
import pytest

from _games import buchi_oracle, random_game
from swarm_ltl.abstraction import Action, Dfts, State
from swarm_ltl.spec import Atom, Gr1Spec
from swarm_ltl.synthesis import (GameStructure, Strategy, StrategyError, SynthesisError,
                                 SynthesisResult, cpre, env_valuations, extract_strategy,
                                 load_strategy, save_strategy, solve_gr1, strategy_from_dict,
                                 strategy_to_dict, synthesize, verify_strategy)

HOME = State((0, 0), "f2")
GOAL = State((4, 4), "f3")
CHARGED = frozenset({"battery"})
EMPTY: frozenset[str] = frozenset()

EnvPolicy = Callable[[int, tuple[Hashable, ...]], Hashable]


def _small_game() -> GameStructure:
    return GameStructure(
        positions=("p0", "p1", "p2"),
        env_moves=(("x", "y"), ("x",), ()),
        sys_moves={(0, "x"): (("a", 1),), (0, "y"): (("a", 2),),
                   (1, "x"): (("a", 1), ("b", 0))},
        sys_justice=(np.array([False, True, False]),),
        initial=(0, 1))


def _walk(strategy: Strategy, start: int, policy: EnvPolicy, game: GameStructure,
          steps: int) -> list[tuple[State, frozenset[str]]]:
    """Positions visited when the env picks with policy among its legal moves."""
    node = start
    visited = [strategy.nodes[node].position]
    for k in range(steps):
        p = game.index(strategy.nodes[node].position)
        env = policy(k, game.env_moves[p])
        assert env in game.env_moves[p]
        _, node = strategy.move(node, env)
        visited.append(strategy.nodes[node].position)
    return visited  # type: ignore[return-value]


def test_env_valuations() -> None:
    assert env_valuations(()) == [EMPTY]
    assert env_valuations(("a", "b")) == [EMPTY, {"a"}, {"b"}, {"a", "b"}]


def test_cpre() -> None:
    game = _small_game()
    assert cpre(game, np.array([False, True, False])).tolist() == [False, True, False]
    assert cpre(game, np.array([False, True, True])).tolist() == [True, True, False]
    assert cpre(game, np.ones(3, dtype=bool)).tolist() == [True, True, False]
    with pytest.raises(ValueError, match="shape"):
        cpre(game, np.ones(2, dtype=bool))


def test_cpre_is_monotone() -> None:
    rng = np.random.default_rng(17)
    for _ in range(100):
        game = random_game(rng, int(rng.integers(1, 12)))
        small = rng.random(game.n) < 0.4
        large = small | (rng.random(game.n) < 0.3)
        assert np.all(~cpre(game, small) | cpre(game, large))


def test_small_game_solution() -> None:
    game = _small_game()
    z, layers = solve_gr1(game)
    assert z.tolist() == [False, True, False]
    assert len(layers) == 1
    with pytest.raises(SynthesisError, match="p0") as exc_info:
        extract_strategy(game, z, layers)
    assert exc_info.value.position == "p0"

    strategy = extract_strategy(game, z, layers, initial=(1,))
    assert strategy.move(strategy.start("p1"), "x") == ("a", 0)
    assert verify_strategy(dataclasses.replace(game, initial=(1,)), strategy).passed


def test_game_validation() -> None:
    with pytest.raises(ValueError, match="one entry per position"):
        GameStructure(positions=(0, 1), env_moves=((),), sys_moves={})
    with pytest.raises(ValueError, match="out of range"):
        GameStructure(positions=(0,), env_moves=(("x",),), sys_moves={(0, "x"): (("a", 3),)})
    with pytest.raises(ValueError, match="unique"):
        GameStructure(positions=(0, 0), env_moves=((), ()), sys_moves={})
    with pytest.raises(KeyError, match="not an env move"):
        _small_game().responses(1, "y")


def test_empty_goals_read_as_true() -> None:
    game = GameStructure(positions=(0,), env_moves=(("x",),), sys_moves={(0, "x"): (("a", 0),)},
                         initial=(0,))
    z, layers = solve_gr1(game)
    assert z.tolist() == [True]
    strategy = extract_strategy(game, z, layers)
    assert strategy.goals == 1
    assert verify_strategy(game, strategy).passed


def test_winning_region_matches_oracle() -> None:
    for seed in range(200):
        rng = np.random.default_rng(seed)
        game = random_game(rng, int(rng.integers(1, 11)))
        z, _ = solve_gr1(game)
        assert set(np.flatnonzero(z).tolist()) == buchi_oracle(game), seed


def test_strategies_verify_on_random_games() -> None:
    checked = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        game = random_game(rng, int(rng.integers(2, 11)), goals=2,
                           env_justice=int(rng.integers(0, 3)), deadlock_prob=0.05)
        z, layers = solve_gr1(game)
        winning = tuple(np.flatnonzero(z).tolist())
        if not winning:
            continue
        game = dataclasses.replace(game, initial=winning)
        strategy = extract_strategy(game, z, layers)
        report = verify_strategy(game, strategy)
        assert report.passed, (seed, report)
        checked += 1
    assert checked > 0


def test_winning_region_is_closed() -> None:
    # Every winning position can answer every env move inside the winning region.
    for seed in range(30):
        rng = np.random.default_rng(seed)
        game = random_game(rng, 8, goals=2, env_justice=1)
        z, _ = solve_gr1(game)
        assert not np.any(z & ~cpre(game, z))


def test_patrol_game(patrol_game: GameStructure) -> None:
    assert patrol_game.n == 72
    assert [patrol_game.positions[p] for p in patrol_game.initial] == [(HOME, CHARGED)]
    # Battery only recovers at home, and never drops there.
    away = patrol_game.index((State((2, 0), "f1"), EMPTY))
    assert patrol_game.env_moves[away] == (EMPTY,)
    assert patrol_game.env_moves[patrol_game.index((HOME, EMPTY))] == (CHARGED,)
    assert patrol_game.env_moves[patrol_game.index((HOME, CHARGED))] == (EMPTY, CHARGED)
    assert patrol_game.has_env_move.all()
    assert patrol_game.safe.all()


def test_patrol_realizable(patrol_result: SynthesisResult) -> None:
    assert patrol_result.realizable
    assert patrol_result.report is not None
    assert patrol_result.report.passed
    assert patrol_result.report.reachable_nodes > 0
    assert patrol_result.winning[list(patrol_result.game.initial)].all()
    summary = patrol_result.to_dict()
    assert summary["realizable"] is True
    assert summary["positions"] == 72


def test_patrol_strategy_patrols(patrol_result: SynthesisResult,
                                 patrol_game: GameStructure) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    start = strategy.start((HOME, CHARGED))
    visited = _walk(strategy, start, lambda k, moves: CHARGED, patrol_game, 60)
    states = [s for s, _ in visited]
    assert GOAL in states
    first = states.index(GOAL)
    assert all(s.cell != (0, 0) for s in states[first:])


def test_patrol_strategy_recharges(patrol_result: SynthesisResult,
                                  patrol_game: GameStructure) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None

    def drain_at_ten(k: int, moves: tuple[Hashable, ...]) -> Hashable:
        wanted = EMPTY if k == 10 else CHARGED
        return wanted if wanted in moves else moves[0]

    visited = _walk(strategy, strategy.start((HOME, CHARGED)), drain_at_ten, patrol_game, 120)
    drained = next(k for k, (_, e) in enumerate(visited) if e == EMPTY)
    recharged = next(k for k in range(drained, len(visited)) if visited[k][1] == CHARGED)
    assert visited[recharged - 1][0].cell == (0, 0)
    assert GOAL in [s for s, _ in visited[recharged:]]


def test_mutated_strategy_gives_lasso(patrol_result: SynthesisResult,
                                      patrol_game: GameStructure) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    i0 = strategy.start((HOME, CHARGED))
    transitions = dict(strategy.transitions)
    transitions[(i0, CHARGED)] = (Action("stay"), i0)
    lazy = Strategy(strategy.nodes, strategy.initial, transitions, strategy.goals)

    report = verify_strategy(patrol_game, lazy)
    assert not report.passed
    assert report.reason == "Cycle never reaching system goal 0"
    assert report.cycle == (i0,)
    assert report.stem == ()


def test_illegal_move_detected(patrol_result: SynthesisResult, patrol_game: GameStructure) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    i0 = strategy.start((HOME, CHARGED))
    transitions = dict(strategy.transitions)
    del transitions[(i0, EMPTY)]
    report = verify_strategy(patrol_game, Strategy(strategy.nodes, strategy.initial,
                                                  transitions, strategy.goals))
    assert not report.passed
    assert report.reason is not None
    assert "No move" in report.reason


def test_unrealizable(patrol_dfts: Dfts, patrol_spec: Gr1Spec) -> None:
    spec = dataclasses.replace(patrol_spec, sys_justice=(Atom("obstacle"),))
    result = synthesize(patrol_dfts, spec)
    assert not result.realizable
    assert result.strategy is None
    assert not result.winning.any()
    assert result.to_dict()["nodes"] == 0


def test_strategy_move_errors(patrol_result: SynthesisResult) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    with pytest.raises(StrategyError, match="No initial node"):
        strategy.start((GOAL, CHARGED))
    with pytest.raises(StrategyError, match="no move"):
        strategy.move(0, frozenset({"rain"}))


def test_strategy_save_and_load(patrol_result: SynthesisResult, patrol_dfts: Dfts,
                                tmp_path: Path) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    path = tmp_path / "strategy.json"
    save_strategy(strategy, ("battery",), path)
    loaded = load_strategy(path, patrol_dfts)
    assert loaded.nodes == strategy.nodes
    assert loaded.initial == strategy.initial
    assert dict(loaded.transitions) == dict(strategy.transitions)


def test_strategy_checked_against_dfts(patrol_result: SynthesisResult, patrol_dfts: Dfts) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    data = json.loads(json.dumps(strategy_to_dict(strategy, ("battery",))))
    data["transitions"][0]["action"] = {"move": "west", "switch": None}
    with pytest.raises(StrategyError, match="disagrees with the DFTS"):
        strategy_from_dict(data, patrol_dfts)

    data = json.loads(json.dumps(strategy_to_dict(strategy, ("battery",))))
    data["nodes"][0]["cell"] = [2, 2]
    with pytest.raises(StrategyError, match="not a DFTS state"):
        strategy_from_dict(data, patrol_dfts)
