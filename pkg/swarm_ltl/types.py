import sys
from collections.abc import Sequence
from typing import Literal, Optional

if sys.version_info >= (3, 12):
    from typing import TypedDict
else:
    from typing_extensions import TypedDict

Cell = tuple[int, int]
Point = tuple[float, float]
Matrix2 = tuple[Point, Point]
Valuation = frozenset[str]
"""Set of atomic propositions that are currently true."""

MOVES = ("stay", "north", "south", "east", "west")
RuleKind = Literal["forbid_formation_in_cell", "forbid_cell", "require_formation_for_move"]


class DisplacementEntry(TypedDict):
    i: int
    j: int
    d: Point


class _FormationEntry(TypedDict, total=False):
    # Atomic propositions for L_f, defaults to [id].
    labels: Sequence[str]


class FormationEntry(_FormationEntry):
    id: str
    displacements: Sequence[DisplacementEntry]


class ObstacleEntry(TypedDict):
    eta: Point
    P: Matrix2


class _RuleEntry(TypedDict, total=False):
    cells: Sequence[Cell]
    formations: Sequence[str]
    # One of MOVES, or omitted for any move.
    direction: str


class RuleEntry(_RuleEntry):
    kind: RuleKind


class InitialEntry(TypedDict):
    cell: Cell
    formation: str


class _WorldFile(TypedDict, total=False):
    origin: Point
    obstacles: Sequence[ObstacleEntry]
    rules: Sequence[RuleEntry]
    initial: InitialEntry
    env_vars: Sequence[str]
    description: str


class WorldFile(_WorldFile):
    rows: int
    cols: int
    cell_size: float
    # labels[iy][ix]; iy = 0 is the row touching the origin. Each entry is a
    # primary label optionally followed by "+extra" labels.
    labels: Sequence[Sequence[str]]
    formations: Sequence[FormationEntry]


class ActionEntry(TypedDict):
    move: str
    switch: Optional[str]


class StateEntry(TypedDict):
    cell: Cell
    formation: str


class DftsTransitionEntry(TypedDict):
    source: StateEntry
    action: ActionEntry
    target: StateEntry


class DftsFile(TypedDict):
    states: Sequence[StateEntry]
    initial: StateEntry
    transitions: Sequence[DftsTransitionEntry]
    labels: Sequence[Sequence[str]]


class NodeEntry(TypedDict):
    cell: Cell
    formation: str
    env: Sequence[str]
    goal: int


class StrategyTransitionEntry(TypedDict):
    node: int
    env: Sequence[str]
    action: ActionEntry
    next: int


class StrategyFile(TypedDict):
    env_vars: Sequence[str]
    goals: int
    nodes: Sequence[NodeEntry]
    initial: Sequence[int]
    transitions: Sequence[StrategyTransitionEntry]


class OverrideFile(TypedDict, total=False):
    """JSON file given with --config."""
    qp: dict[str, object]
    fxt: dict[str, object]
    sim: dict[str, object]
    seed: int
