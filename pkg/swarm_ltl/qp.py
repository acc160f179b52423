"""Per-control-step QP: fixed-time CLF rows for the waypoint and formation, CBF rows
for separation, obstacles and the workspace walls.

Decision vector z = [u_0x, u_0y, ..., u_(r-1)x, u_(r-1)y, delta1, delta2].
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import ConfigDict

from .geometry import (ControlInput, Formation, SwarmState, Vec2, as_vec2, centroid,
                       displacement, grad_h_formation, grad_h_separation, grad_h_waypoint,
                       h_formation, h_separation, h_waypoint, pairs)
from .solvers import AbstractQpSolver, DualActiveSetSolver, QpProblem, QpSolution, RowTag
from .world import BOUND_SIDES, GridWorld

logger = logging.getLogger(__name__)

# Gradient of each GridWorld.bound_barriers() entry.
_SIDE_GRADIENTS = {"xmin": (1.0, 0.0), "xmax": (-1.0, 0.0),
                   "ymin": (0.0, 1.0), "ymax": (0.0, -1.0)}


@dataclass(frozen=True)
class FxtParams:
    __pydantic_config__ = ConfigDict(extra="forbid")

    mu: float
    T_ud: float
    alpha1: float
    alpha2: float
    gamma1: float
    gamma2: float


def fxt_params(mu: float = 2.0, T_ud: float = 4.0) -> FxtParams:
    """alpha1 = alpha2 = mu pi / (2 T_ud), gamma = 1 +- 1/mu."""
    if not mu > 1:
        raise ValueError(f"mu must be greater than 1, got {mu}")
    if not T_ud > 0:
        raise ValueError(f"T_ud must be positive, got {T_ud}")
    alpha = mu * math.pi / (2 * T_ud)
    return FxtParams(mu=mu, T_ud=T_ud, alpha1=alpha, alpha2=alpha,
                     gamma1=1 + 1 / mu, gamma2=1 - 1 / mu)


@dataclass(frozen=True)
class QpConfig:
    __pydantic_config__ = ConfigDict(extra="forbid")

    d_G: float = 0.10
    d_F: float = 0.05
    d_O: float = 0.30
    u_max: float = 5.0
    # Quadratic weights on every u entry, delta1 and delta2.
    H_diag: tuple[float, float, float] = (1.0, 1.0, 1.0)
    w_delta1: float = 100.0
    delta2_max: float = 10.0
    workspace_bounds: bool = True
    feas_tol: float = 1e-6
    max_iter: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("d_G", "d_F", "d_O", "u_max", "w_delta1", "delta2_max", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.H_diag) != 3 or not all(h > 0 for h in self.H_diag):
            raise ValueError(f"H_diag must be three positive weights, got {self.H_diag}")

    def h_matrix(self, r: int) -> np.ndarray:
        h_u, h_1, h_2 = self.H_diag
        return np.diag([h_u] * (2 * r) + [h_1, h_2])


def clf_rhs(h: float, p: FxtParams) -> float:
    v = max(0.0, h)
    return -p.alpha1 * v ** p.gamma1 - p.alpha2 * v ** p.gamma2


class _Rows:
    def __init__(self, dim: int):
        self.dim = dim
        self.A: list[np.ndarray] = []
        self.b: list[float] = []
        self.tags: list[RowTag] = []

    def add(self, tag: RowTag, coeffs: dict[int, float], bound: float) -> None:
        row = np.zeros(self.dim)
        for k, c in coeffs.items():
            row[k] += c
        self.A.append(row)
        self.b.append(bound)
        self.tags.append(tag)


def _pair_coeffs(g: Vec2, i: int, j: int, sign: float = 1.0) -> dict[int, float]:
    """sign * g . (u_i - u_j) as coefficients."""
    return {2 * i: sign * g[0], 2 * i + 1: sign * g[1],
            2 * j: -sign * g[0], 2 * j + 1: -sign * g[1]}


def build_qp(state: SwarmState, w: ArrayLike, f: Formation, world: GridWorld,
             cfg: QpConfig, p: FxtParams) -> QpProblem:
    r = state.r
    if f.r != r:
        raise ValueError(f"Formation {f.id} is for {f.r} robots, the swarm has {r}")
    w = as_vec2(w)
    dim = 2 * r + 2
    d1, d2 = 2 * r, 2 * r + 1
    rows = _Rows(dim)

    bound = cfg.u_max / math.sqrt(2)
    for i in range(r):
        for k, axis in enumerate("xy"):
            rows.add(RowTag("input-bound", (i, axis, "+")), {2 * i + k: 1.0}, bound)
            rows.add(RowTag("input-bound", (i, axis, "-")), {2 * i + k: -1.0}, bound)

    x_c = centroid(state)
    h_w = h_waypoint(x_c, w, cfg.d_G)
    g_w = grad_h_waypoint(x_c, w)
    coeffs = {k: g_w[k % 2] / r for k in range(2 * r)}
    coeffs[d1] = -h_w
    rows.add(RowTag("clf-centroid"), coeffs, clf_rhs(h_w, p))

    for i, j in pairs(r):
        x_ij = displacement(state, i, j)
        h_f = h_formation(x_ij, f.f(i, j), cfg.d_F)
        coeffs = _pair_coeffs(grad_h_formation(x_ij, f.f(i, j)), i, j)
        coeffs[d1] = -h_f
        rows.add(RowTag("clf-formation", (i, j)), coeffs, clf_rhs(h_f, p))

    for i, j in pairs(r):
        x_ij = displacement(state, i, j)
        coeffs = _pair_coeffs(grad_h_separation(x_ij), i, j, sign=-1.0)
        coeffs[d2] = -h_separation(x_ij, cfg.d_O)
        rows.add(RowTag("cbf-separation", (i, j)), coeffs, 0.0)

    for i in range(r):
        x_i = state.positions[i]
        for k, obstacle in enumerate(world.obstacles):
            g = obstacle.barrier_grad(x_i)
            rows.add(RowTag("cbf-obstacle", (i, k)),
                     {2 * i: -g[0], 2 * i + 1: -g[1], d2: -obstacle.barrier(x_i)}, 0.0)

    if cfg.workspace_bounds:
        for i in range(r):
            barriers = world.bound_barriers(state.positions[i])
            for side, b in zip(BOUND_SIDES, barriers):
                gx, gy = _SIDE_GRADIENTS[side]
                rows.add(RowTag("cbf-workspace", (i, side)),
                         {2 * i: -gx, 2 * i + 1: -gy, d2: -float(b)}, 0.0)

    rows.add(RowTag("slack-bound", ("lower",)), {d2: -1.0}, 0.0)
    rows.add(RowTag("slack-bound", ("upper",)), {d2: 1.0}, cfg.delta2_max)

    q = np.zeros(dim)
    q[d1] = cfg.w_delta1
    return QpProblem(cfg.h_matrix(r), q, np.array(rows.A).reshape(-1, dim), np.array(rows.b),
                     tuple(rows.tags))


def solve_qp(problem: QpProblem, feas_tol: float = 1e-6, max_iter: Optional[int] = None,
             solver: Optional[AbstractQpSolver] = None) -> QpSolution:
    if solver is None:
        solver = DualActiveSetSolver(feas_tol, max_iter)
    return solver.solve(problem)


def split_solution(z: ArrayLike, r: int) -> tuple[ControlInput, float, float]:
    """(u, delta1, delta2) from a decision vector."""
    v = np.asarray(z, dtype=float)
    if v.shape != (2 * r + 2,):
        raise ValueError(f"Decision vector must have {2 * r + 2} entries, got {v.shape}")
    return ControlInput(v[:2 * r].reshape(r, 2)), float(v[2 * r]), float(v[2 * r + 1])


def dump_qp(problem: QpProblem, path: Union[str, Path], **meta: object) -> None:
    data = problem.to_dict()
    data["meta"] = meta
    Path(path).write_text(json.dumps(data, indent=1))
