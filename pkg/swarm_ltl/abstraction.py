"""Deterministic finite transition system over (cell, formation) states."""

import json
import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray

from .config import check
from .types import MOVES, Cell, DftsFile, StateEntry
from .world import FeasibilityRule, GridWorld, label_f, label_w

logger = logging.getLogger(__name__)


class AbstractionError(ValueError):
    """Invalid abstraction query or construction."""


class State(NamedTuple):
    cell: Cell
    formation: str


class Action(NamedTuple):
    move: str
    # None keeps the current formation.
    switch: Optional[str] = None

    def __str__(self) -> str:
        return self.move if self.switch is None else f"{self.move}+{self.switch}"


def action_alphabet(formation_ids: Sequence[str]) -> tuple[Action, ...]:
    """{stay, north, south, east, west} x {keep, switch_to(f)} in a fixed order."""
    return tuple(Action(m, s) for m in MOVES for s in (None, *formation_ids))


@dataclass(frozen=True, eq=False)
class Dfts:
    states: tuple[State, ...]
    initial: State
    actions: tuple[Action, ...]
    delta: Mapping[tuple[State, Action], State]
    labels: Mapping[State, frozenset[str]]
    _index: Mapping[State, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "delta", MappingProxyType(dict(self.delta)))
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))
        object.__setattr__(self, "_index", MappingProxyType(
            {s: k for k, s in enumerate(self.states)}))
        if self.initial not in self._index:
            raise AbstractionError(f"Initial state {self.initial} is not a state")
        if self.labels.keys() != self._index.keys():
            raise AbstractionError("Labels must be defined for exactly the states")
        for (s, a), t in self.delta.items():
            if s not in self._index or t not in self._index:
                raise AbstractionError(f"Transition {s} --{a}--> {t} leaves the state set")
        if any("obstacle" in lab for lab in self.labels.values()):
            raise AbstractionError("A state carries the obstacle label")

    def index(self, state: State) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise AbstractionError(f"Unknown state: {state}") from None

    def __contains__(self, state: object) -> bool:
        return state in self._index

    def step(self, state: State, action: Action) -> Optional[State]:
        return self.delta.get((state, action))

    def dead_ends(self) -> list[State]:
        sources = {s for s, _ in self.delta}
        return [s for s in self.states if s not in sources]

    def transition_matrix(self) -> NDArray[np.int64]:
        """delta as a |S| x |A| matrix of successor indices (-1 when undefined)."""
        m = np.full((len(self.states), len(self.actions)), -1, dtype=np.int64)
        a_index = {a: k for k, a in enumerate(self.actions)}
        for (s, a), t in self.delta.items():
            m[self._index[s], a_index[a]] = self._index[t]
        return m


def successors(dfts: Dfts, state: State) -> list[tuple[Action, State]]:
    """Enabled (action, successor) pairs in action alphabet order."""
    dfts.index(state)
    return [(a, t) for a in dfts.actions
            if (t := dfts.delta.get((state, a))) is not None]


def full_product(world: GridWorld) -> list[State]:
    """Every cell x formation pair, before any elimination."""
    return [State(c, f) for c in world.cells() for f in world.catalog.ids]


def _violates(rule: FeasibilityRule, source: State, action: Action, target: State) -> bool:
    if rule.kind == "forbid_cell":
        return target.cell in rule.cells
    if rule.kind == "forbid_formation_in_cell":
        return target.cell in rule.cells and target.formation in rule.formations
    # require_formation_for_move
    if rule.direction is not None and action.move != rule.direction:
        return False
    return target.cell in rule.cells and target.formation not in rule.formations


def build_dfts(world: GridWorld, rules: Optional[Sequence[FeasibilityRule]] = None,
               initial: Optional[State] = None, *,
               switch_while_moving: bool = True) -> Dfts:
    """Generate the full product transitions, then drop the infeasible ones."""
    if rules is None:
        rules = world.rules
    if initial is None:
        if world.initial is None:
            raise AbstractionError("No initial state given and the world declares none")
        initial = State(*world.initial)
    initial = State(tuple(initial[0]), initial[1])  # type: ignore[arg-type]
    world.check_cell(initial.cell)
    world.catalog[initial.formation]
    if world.is_obstacle(initial.cell):
        raise AbstractionError(f"Initial cell {initial.cell} is an obstacle")

    candidates = full_product(world)
    states = [s for s in candidates
              if not world.is_obstacle(s.cell)
              and not any(_violates(r, s, Action("stay"), s) for r in rules
                          if r.kind != "require_formation_for_move")]
    if initial not in states:
        raise AbstractionError(f"Initial state {initial} is eliminated by the rules")
    allowed = set(states)

    actions = action_alphabet(world.catalog.ids)
    delta = {}
    removed = 0
    for s in states:
        for a in actions:
            if a.switch == s.formation:
                continue  # same as keep
            if a.switch is not None and a.move != "stay" and not switch_while_moving:
                continue
            cell = world.neighbour(s.cell, a.move)
            if cell is None:
                continue
            t = State(cell, a.switch or s.formation)
            if t not in allowed or any(_violates(r, s, a, t) for r in rules):
                removed += 1
                continue
            delta[(s, a)] = t

    labels = {s: label_w(world, s.cell) | label_f(world.catalog, s.formation) for s in states}
    dfts = Dfts(tuple(states), initial, actions, delta, labels)
    logger.info("Built DFTS: %d candidate states, %d states, %d transitions (%d eliminated)",
                len(candidates), len(states), len(delta), removed)
    for s in dfts.dead_ends():
        logger.warning("DFTS state %s has no outgoing transitions", s)
    return dfts


def prune_transition(dfts: Dfts, state: State, action: Action) -> Dfts:
    if (state, action) not in dfts.delta:
        raise AbstractionError(f"Unknown transition: {state} --{action}-->")
    delta = {k: v for k, v in dfts.delta.items() if k != (state, action)}
    logger.info("Pruned transition %s --%s--> %s", state, action, dfts.delta[(state, action)])
    return Dfts(dfts.states, dfts.initial, dfts.actions, delta, dfts.labels)


def _state_entry(s: State) -> StateEntry:
    return {"cell": s.cell, "formation": s.formation}


def _state_from_entry(entry: StateEntry) -> State:
    return State(tuple(entry["cell"]), entry["formation"])  # type: ignore[arg-type]


def dfts_to_dict(dfts: Dfts) -> DftsFile:
    return {
        "states": [_state_entry(s) for s in dfts.states],
        "initial": _state_entry(dfts.initial),
        "transitions": [{"source": _state_entry(s), "action": {"move": a.move, "switch": a.switch},
                         "target": _state_entry(t)} for (s, a), t in dfts.delta.items()],
        "labels": [sorted(dfts.labels[s]) for s in dfts.states]}


def dfts_from_dict(raw: object, formation_ids: Sequence[str]) -> Dfts:
    data = check(DftsFile, raw)
    states = tuple(_state_from_entry(s) for s in data["states"])
    if len(data["labels"]) != len(states):
        raise AbstractionError("One label list per state is required")
    delta = {(_state_from_entry(t["source"]), Action(t["action"]["move"], t["action"]["switch"])):
             _state_from_entry(t["target"]) for t in data["transitions"]}
    return Dfts(states, _state_from_entry(data["initial"]), action_alphabet(formation_ids), delta,
                {s: frozenset(lab) for s, lab in zip(states, data["labels"])})


def save_dfts(dfts: Dfts, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(dfts_to_dict(dfts), indent=1))


def load_dfts(path: Union[str, Path], formation_ids: Sequence[str]) -> Dfts:
    return dfts_from_dict(json.loads(Path(path).read_text()), formation_ids)


def iter_transitions(dfts: Dfts) -> Iterator[tuple[State, Action, State]]:
    return ((s, a, t) for (s, a), t in dfts.delta.items())
