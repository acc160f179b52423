"""Swarm geometry: states, formations and the barrier/Lyapunov functions on them.

Sign conventions:
    h_waypoint, h_formation  negative inside the target tolerance ball.
    h_separation             non-negative when the pair is far enough apart.
    h_obstacle               positive inside the obstacle ellipse, the monitored
                             obstacle barrier is -h_obstacle (>= 0 when safe).
"""

import itertools
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from numpy.typing import ArrayLike, NDArray

Vec2 = NDArray[np.float64]
Pair = tuple[int, int]


def vec2(x: float, y: float) -> Vec2:
    return np.array((x, y), dtype=float)


def as_vec2(value: ArrayLike) -> Vec2:
    v = np.array(value, dtype=float).reshape(-1)
    if v.shape != (2,):
        raise ValueError(f"Expected a planar vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"Vector must be finite: {v}")
    v.setflags(write=False)
    return v


def _frozen_points(points: ArrayLike, what: str) -> NDArray[np.float64]:
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what} must be a sequence of planar points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")
    arr.setflags(write=False)
    return arr


def pairs(r: int) -> Iterator[Pair]:
    """All ordered pairs (i, j) with i < j, in lexicographic order."""
    return itertools.combinations(range(r), 2)


@dataclass(frozen=True, eq=False)
class SwarmState:
    """Positions of all r robots, shape (r, 2)."""

    positions: NDArray[np.float64]

    def __post_init__(self) -> None:
        arr = _frozen_points(self.positions, "SwarmState positions")
        if arr.shape[0] < 2:
            raise ValueError(f"A swarm needs at least 2 robots, got {arr.shape[0]}")
        object.__setattr__(self, "positions", arr)

    @classmethod
    def from_points(cls, points: Iterable[ArrayLike]) -> "SwarmState":
        return cls(np.array([as_vec2(p) for p in points]))

    @classmethod
    def in_formation(cls, centre: ArrayLike, formation: "Formation") -> "SwarmState":
        """Robots placed exactly in formation with the centroid at centre."""
        return cls(formation.offsets() + as_vec2(centre))

    @property
    def r(self) -> int:
        return int(self.positions.shape[0])

    def translate(self, t: ArrayLike) -> "SwarmState":
        return SwarmState(self.positions + as_vec2(t))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SwarmState):
            return NotImplemented
        return bool(np.array_equal(self.positions, other.positions))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ControlInput:
    """Single-integrator velocity commands, shape (r, 2), metres/second."""

    inputs: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _frozen_points(self.inputs, "ControlInput"))

    @classmethod
    def zeros(cls, r: int) -> "ControlInput":
        return cls(np.zeros((r, 2)))

    @property
    def r(self) -> int:
        return int(self.inputs.shape[0])


@dataclass(frozen=True)
class Formation:
    """Desired displacements f_ij = x_i - x_j, stored for i < j only."""

    id: str
    displacements: Mapping[Pair, Vec2] = field(hash=False, compare=False)
    r: int = field(init=False)

    def __post_init__(self) -> None:
        disp = {}
        for (i, j), d in self.displacements.items():
            if i == j:
                raise ValueError(f"Formation {self.id}: pair ({i}, {j}) is not a pair")
            if i > j:
                i, j, d = j, i, -np.asarray(d, dtype=float)
            disp[(i, j)] = as_vec2(d)

        # r(r-1)/2 entries determine r.
        r = int(round((1 + np.sqrt(1 + 8 * len(disp))) / 2))
        if r < 2 or set(disp) != set(pairs(r)):
            raise ValueError(f"Formation {self.id} must define every pair i < j exactly once")
        object.__setattr__(self, "displacements", MappingProxyType(disp))
        object.__setattr__(self, "r", r)
        if not self.is_consistent():
            raise ValueError(f"Formation {self.id} is not realisable: f_ij != f_ik + f_kj")

    def f(self, i: int, j: int) -> Vec2:
        """Desired displacement for any ordered pair, derived by negation for i > j."""
        if i == j:
            raise ValueError("i and j must differ")
        if i < j:
            return self.displacements[(i, j)]
        return -self.displacements[(j, i)]

    def is_consistent(self, tol: float = 1e-9) -> bool:
        return all(np.allclose(self.f(i, j), self.f(i, k) + self.f(k, j), atol=tol)
                   for i, j, k in itertools.permutations(range(self.r), 3))

    def offsets(self) -> NDArray[np.float64]:
        """Absolute positions realising the formation, centred on the origin.

        Robot 0 sits at the origin and robot k at -f_0k before centring.
        """
        pts = np.array([np.zeros(2)] + [-self.f(0, k) for k in range(1, self.r)])
        return pts - pts.mean(axis=0)


def centroid(s: SwarmState) -> Vec2:
    return s.positions.mean(axis=0)


def displacement(s: SwarmState, i: int, j: int) -> Vec2:
    if not (0 <= i < s.r and 0 <= j < s.r):
        raise IndexError(f"Robot index out of range for r={s.r}: ({i}, {j})")
    if i == j:
        raise ValueError("displacement() needs two different robots")
    return s.positions[i] - s.positions[j]


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def check_positive_definite(P: ArrayLike) -> NDArray[np.float64]:
    m = np.array(P, dtype=float)
    if m.shape != (2, 2) or not np.all(np.isfinite(m)):
        raise ValueError(f"P must be a finite 2x2 matrix, got {m.tolist()}")
    if not np.allclose(m, m.T):
        raise ValueError(f"P must be symmetric, got {m.tolist()}")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"P must be positive-definite, got {m.tolist()}") from None
    m.setflags(write=False)
    return m


def h_waypoint(x_c: ArrayLike, w: ArrayLike, d_G: float) -> float:
    _positive("d_G", d_G)
    e = np.asarray(x_c, dtype=float) - np.asarray(w, dtype=float)
    return float(e @ e - d_G ** 2)


def h_formation(x_ij: ArrayLike, f_ij: ArrayLike, d_F: float) -> float:
    _positive("d_F", d_F)
    e = np.asarray(x_ij, dtype=float) - np.asarray(f_ij, dtype=float)
    return float(e @ e - d_F ** 2)


def h_separation(x_ij: ArrayLike, d_O: float) -> float:
    _positive("d_O", d_O)
    x = np.asarray(x_ij, dtype=float)
    return float(x @ x - d_O ** 2)


def h_obstacle(x: ArrayLike, eta: ArrayLike, P: ArrayLike) -> float:
    m = check_positive_definite(P)
    e = np.asarray(x, dtype=float) - np.asarray(eta, dtype=float)
    return float(1.0 - e @ m @ e)


def grad_h_waypoint(x_c: ArrayLike, w: ArrayLike) -> Vec2:
    return 2.0 * (np.asarray(x_c, dtype=float) - np.asarray(w, dtype=float))


def grad_h_formation(x_ij: ArrayLike, f_ij: ArrayLike) -> Vec2:
    return 2.0 * (np.asarray(x_ij, dtype=float) - np.asarray(f_ij, dtype=float))


def grad_h_separation(x_ij: ArrayLike) -> Vec2:
    return 2.0 * np.asarray(x_ij, dtype=float)


def grad_h_obstacle(x: ArrayLike, eta: ArrayLike, P: ArrayLike) -> Vec2:
    m = check_positive_definite(P)
    e = np.asarray(x, dtype=float) - np.asarray(eta, dtype=float)
    # -2 (x - eta)^T P, P symmetric.
    return -2.0 * (e @ m)
