"""Grid workspace, obstacle ellipses, formation catalog and the labeling maps."""

import json
import logging
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import check
from .geometry import Formation, Vec2, as_vec2, check_positive_definite
from .types import MOVES, Cell, ObstacleEntry, RuleEntry, Valuation, WorldFile

logger = logging.getLogger(__name__)

REGION_LABELS = frozenset({"freespace", "home", "goal", "obstacle"})
BOUND_SIDES = ("xmin", "xmax", "ymin", "ymax")


class WorldError(ValueError):
    """Invalid world description or query."""


@dataclass(frozen=True, eq=False)
class ObstacleEllipse:
    """Obstacle {x : (x - eta)^T P (x - eta) <= 1}."""

    eta: Vec2
    P: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "eta", as_vec2(self.eta))
        object.__setattr__(self, "P", check_positive_definite(self.P))

    @classmethod
    def circle(cls, centre: ArrayLike, radius: float) -> "ObstacleEllipse":
        return cls(as_vec2(centre), np.eye(2) / radius ** 2)

    def barrier(self, x: ArrayLike) -> float:
        """-h_obstacle: non-negative outside the ellipse."""
        e = np.asarray(x, dtype=float) - self.eta
        return float(e @ self.P @ e - 1.0)

    def barrier_grad(self, x: ArrayLike) -> Vec2:
        return 2.0 * (self.P @ (np.asarray(x, dtype=float) - self.eta))


@dataclass(frozen=True)
class FormationCatalog:
    formations: Mapping[str, Formation] = field(hash=False)
    labels: Mapping[str, frozenset[str]] = field(hash=False)

    def __post_init__(self) -> None:
        if not self.formations:
            raise WorldError("Formation catalog is empty")
        sizes = {f.r for f in self.formations.values()}
        if len(sizes) != 1:
            raise WorldError(f"Formations disagree on the number of robots: {sorted(sizes)}")
        if self.labels.keys() != self.formations.keys():
            raise WorldError("Every formation needs a label set")
        object.__setattr__(self, "formations", MappingProxyType(dict(self.formations)))
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))

    @property
    def r(self) -> int:
        return next(iter(self.formations.values())).r

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.formations)

    def __getitem__(self, formation_id: str) -> Formation:
        try:
            return self.formations[formation_id]
        except KeyError:
            raise WorldError(f"Unknown formation: '{formation_id}'") from None

    def __contains__(self, formation_id: object) -> bool:
        return formation_id in self.formations

    def __iter__(self) -> Iterator[str]:
        return iter(self.formations)

    def __len__(self) -> int:
        return len(self.formations)


@dataclass(frozen=True)
class FeasibilityRule:
    """A transition filter applied while building the abstraction."""

    kind: str
    cells: tuple[Cell, ...] = ()
    formations: tuple[str, ...] = ()
    direction: Optional[str] = None


@dataclass(frozen=True, eq=False)
class GridWorld:
    rows: int
    cols: int
    cell_size: float
    origin: Vec2
    cell_labels: Mapping[Cell, frozenset[str]]
    obstacles: tuple[ObstacleEllipse, ...]
    catalog: FormationCatalog
    rules: tuple[FeasibilityRule, ...] = ()
    initial: Optional[tuple[Cell, str]] = None
    env_vars: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1 or not self.cell_size > 0:
            raise WorldError("Grid needs positive dimensions and cell size")
        object.__setattr__(self, "origin", as_vec2(self.origin))
        if set(self.cell_labels) != set(self.cells()):
            raise WorldError("cell_labels must cover every cell exactly")
        for c, labels in self.cell_labels.items():
            primary = labels & REGION_LABELS
            if len(primary) != 1:
                raise WorldError(f"Cell {c} needs exactly one region label, got {sorted(primary)}")
            if "obstacle" in labels:
                centre = self.cell_centre(c)
                if not any(o.barrier(centre) < 0 for o in self.obstacles):
                    raise WorldError(f"Obstacle cell {c} is not covered by any obstacle ellipse")
        object.__setattr__(self, "cell_labels", MappingProxyType(dict(self.cell_labels)))
        for rule in self.rules:
            self._check_rule(rule)
        if self.initial is not None:
            cell, formation_id = self.initial
            self.check_cell(cell)
            self.catalog[formation_id]

    def _check_rule(self, rule: FeasibilityRule) -> None:
        if rule.kind not in {"forbid_formation_in_cell", "forbid_cell",
                             "require_formation_for_move"}:
            raise WorldError(f"Unknown rule kind: '{rule.kind}'")
        for c in rule.cells:
            self.check_cell(c)
        for f in rule.formations:
            self.catalog[f]
        if rule.direction is not None and rule.direction not in MOVES:
            raise WorldError(f"Unknown direction in rule: '{rule.direction}'")

    def cells(self) -> Iterator[Cell]:
        """All cells (ix, iy) in row-major order."""
        return ((ix, iy) for iy in range(self.rows) for ix in range(self.cols))

    def free_cells(self) -> Iterator[Cell]:
        return (c for c in self.cells() if "obstacle" not in self.cell_labels[c])

    def check_cell(self, cell: Cell) -> None:
        ix, iy = cell
        if not (0 <= ix < self.cols and 0 <= iy < self.rows):
            raise WorldError(f"Cell {cell} is outside the {self.cols}x{self.rows} grid")

    def is_obstacle(self, cell: Cell) -> bool:
        self.check_cell(cell)
        return "obstacle" in self.cell_labels[cell]

    def cell_centre(self, cell: Cell) -> Vec2:
        ix, iy = cell
        return self.origin + self.cell_size * np.array((ix + 0.5, iy + 0.5))

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the workspace."""
        x0, y0 = self.origin
        return (float(x0), float(x0 + self.cols * self.cell_size),
                float(y0), float(y0 + self.rows * self.cell_size))

    def bound_barriers(self, x: ArrayLike) -> NDArray[np.float64]:
        """Distances to the four workspace half-planes (>= 0 inside)."""
        px, py = np.asarray(x, dtype=float)
        xmin, xmax, ymin, ymax = self.bounds()
        return np.array((px - xmin, xmax - px, py - ymin, ymax - py))

    def neighbour(self, cell: Cell, move: str) -> Optional[Cell]:
        dx, dy = {"stay": (0, 0), "north": (0, 1), "south": (0, -1),
                  "east": (1, 0), "west": (-1, 0)}[move]
        target = (cell[0] + dx, cell[1] + dy)
        if 0 <= target[0] < self.cols and 0 <= target[1] < self.rows:
            return target
        return None

    def labels(self, cell: Cell, formation_id: str, env: Valuation) -> frozenset[str]:
        return labels(self, cell, formation_id, env)


def waypoint_of_cell(world: GridWorld, cell: Cell) -> Vec2:
    if world.is_obstacle(cell):
        raise WorldError(f"Cell {cell} is an obstacle and has no waypoint")
    return world.cell_centre(cell)


def cell_of_point(world: GridWorld, p: ArrayLike) -> Cell:
    """Cell containing p, boundary points resolve by floor (the upper workspace edge
    belongs to the last cell)."""
    px, py = np.asarray(p, dtype=float)
    xmin, xmax, ymin, ymax = world.bounds()
    if not (xmin <= px <= xmax and ymin <= py <= ymax):
        raise WorldError(f"Point ({px}, {py}) is outside the workspace")
    ix = min(math.floor((px - xmin) / world.cell_size), world.cols - 1)
    iy = min(math.floor((py - ymin) / world.cell_size), world.rows - 1)
    return (ix, iy)


def label_w(world: GridWorld, cell: Cell) -> frozenset[str]:
    world.check_cell(cell)
    return world.cell_labels[cell]


def label_f(catalog: FormationCatalog, formation_id: str) -> frozenset[str]:
    catalog[formation_id]
    return catalog.labels[formation_id]


def label_e(v: Valuation) -> frozenset[str]:
    return frozenset(v)


def labels(world: GridWorld, cell: Cell, formation_id: str, env: Valuation) -> frozenset[str]:
    """L(w, f, e) = L_w(w) | L_f(f) | L_e(e)."""
    return label_w(world, cell) | label_f(world.catalog, formation_id) | label_e(env)


def _parse_cell_label(text: str) -> frozenset[str]:
    return frozenset(part.strip() for part in text.split("+") if part.strip())


def _rule_from_entry(entry: RuleEntry) -> FeasibilityRule:
    return FeasibilityRule(kind=entry["kind"],
                           cells=tuple(tuple(c) for c in entry.get("cells", ())),  # type: ignore[misc]
                           formations=tuple(entry.get("formations", ())),
                           direction=entry.get("direction"))


def world_from_dict(raw: object) -> GridWorld:
    data = check(WorldFile, raw)
    rows, cols = data["rows"], data["cols"]
    if len(data["labels"]) != rows or any(len(row) != cols for row in data["labels"]):
        raise WorldError(f"labels must be a {rows}x{cols} array")
    cell_labels = {(ix, iy): _parse_cell_label(data["labels"][iy][ix])
                   for iy in range(rows) for ix in range(cols)}

    formations = {}
    formation_labels = {}
    for entry in data["formations"]:
        if entry["id"] in formations:
            raise WorldError(f"Duplicate formation id: '{entry['id']}'")
        disp = {(d["i"], d["j"]): np.array(d["d"], dtype=float) for d in entry["displacements"]}
        formations[entry["id"]] = Formation(entry["id"], disp)
        formation_labels[entry["id"]] = frozenset(entry.get("labels", (entry["id"],)))

    initial = None
    if "initial" in data:
        initial = (tuple(data["initial"]["cell"]), data["initial"]["formation"])

    world = GridWorld(
        rows=rows, cols=cols, cell_size=data["cell_size"],
        origin=np.array(data.get("origin", (0.0, 0.0)), dtype=float),
        cell_labels=cell_labels,
        obstacles=tuple(_ellipse_from_entry(o) for o in data.get("obstacles", ())),
        catalog=FormationCatalog(formations, formation_labels),
        rules=tuple(_rule_from_entry(r) for r in data.get("rules", ())),
        initial=initial,  # type: ignore[arg-type]
        env_vars=tuple(data.get("env_vars", ())))
    logger.debug("Loaded %dx%d world with %d obstacles and %d formations",
                 cols, rows, len(world.obstacles), len(world.catalog))
    return world


def _ellipse_from_entry(entry: ObstacleEntry) -> ObstacleEllipse:
    return ObstacleEllipse(np.array(entry["eta"], dtype=float), np.array(entry["P"], dtype=float))


def load_world(path: Union[str, Path]) -> GridWorld:
    return world_from_dict(json.loads(Path(path).read_text()))
