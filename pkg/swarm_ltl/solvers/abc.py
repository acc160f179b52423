import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Union, final

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration-limit"


class RowTag(NamedTuple):
    """Origin of a constraint row, e.g. cbf-separation(0,1)."""

    kind: str
    args: tuple[Union[int, str], ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return self.kind
        return f"{self.kind}({','.join(map(str, self.args))})"


def _frozen(a: ArrayLike, ndim: int, what: str) -> NDArray[np.float64]:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{what} must have {ndim} dimension(s), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimize z^T H z + q^T z  subject to  A z <= b."""

    H: NDArray[np.float64]
    q: Vector
    A: NDArray[np.float64]
    b: Vector
    tags: tuple[RowTag, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "H", _frozen(self.H, 2, "H"))
        object.__setattr__(self, "q", _frozen(self.q, 1, "q"))
        n = self.q.shape[0]
        A = np.array(self.A, dtype=float).reshape(-1, n)
        object.__setattr__(self, "A", _frozen(A, 2, "A"))
        object.__setattr__(self, "b", _frozen(self.b, 1, "b"))
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if not np.allclose(self.H, self.H.T):
            raise ValueError("H must be symmetric")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("A and b disagree on the number of rows")
        if not self.tags:
            object.__setattr__(self, "tags", tuple(RowTag("row", (k,)) for k in range(self.m)))
        if len(self.tags) != self.m:
            raise ValueError("One tag per constraint row is required")

    @property
    def dim(self) -> int:
        return int(self.q.shape[0])

    @property
    def m(self) -> int:
        return int(self.A.shape[0])

    def rows(self, kind: str) -> list[int]:
        return [k for k, t in enumerate(self.tags) if t.kind == kind]

    def objective(self, z: ArrayLike) -> float:
        v = np.asarray(z, dtype=float)
        return float(v @ self.H @ v + self.q @ v)

    def violation(self, z: ArrayLike) -> float:
        """Largest amount by which any row is violated (0 when feasible)."""
        if self.m == 0:
            return 0.0
        return max(0.0, float(np.max(self.A @ np.asarray(z, dtype=float) - self.b)))

    def to_dict(self) -> dict[str, object]:
        return {"H": self.H.tolist(), "q": self.q.tolist(),
                "rows": [{"tag": str(t), "a": a.tolist(), "b": float(b)}
                         for t, a, b in zip(self.tags, self.A, self.b)]}


@dataclass(frozen=True, eq=False)
class QpSolution:
    z: Vector
    status: QpStatus
    # Row multipliers, >= 0: 2Hz + q + A^T multipliers = 0 at an optimum.
    multipliers: Vector
    max_violation: float
    stationarity_residual: float
    iterations: int = 0
    # y >= 0 with y^T A = 0 and y^T b < 0 proves infeasibility.
    certificate: Optional[Vector] = field(default=None)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class RawResult(NamedTuple):
    z: Vector
    status: QpStatus
    multipliers: Vector
    iterations: int
    certificate: Optional[Vector] = None


class AbstractQpSolver(ABC):
    name: str

    def __init__(self, feas_tol: float = 1e-6, max_iter: Optional[int] = None):
        if not feas_tol > 0:
            raise ValueError(f"feas_tol must be positive, got {feas_tol}")
        self.feas_tol = feas_tol
        self.max_iter = max_iter

    @abstractmethod
    def minimize(self, G: NDArray[np.float64], q: Vector, A: NDArray[np.float64], b: Vector,
                 max_iter: int) -> RawResult:
        """Minimize 1/2 z^T G z + q^T z subject to A z <= b, G positive-definite."""

    @final
    def solve(self, problem: QpProblem) -> QpSolution:
        G = 2.0 * problem.H
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ValueError("H must be positive-definite") from None

        max_iter = self.max_iter or 10 * (problem.m + problem.dim) + 50
        raw = self.minimize(G, problem.q, problem.A, problem.b, max_iter)
        violation = problem.violation(raw.z)
        stationarity = float(np.max(np.abs(G @ raw.z + problem.q + problem.A.T @ raw.multipliers),
                                    initial=0.0))
        status = raw.status
        if status is QpStatus.OPTIMAL and violation > self.feas_tol:
            logger.warning("%s: optimum violates rows by %g, reporting iteration-limit",
                           self.name, violation)
            status = QpStatus.ITERATION_LIMIT
        if status is QpStatus.INFEASIBLE and raw.certificate is not None:
            support = [str(problem.tags[k]) for k in np.flatnonzero(raw.certificate > 0)]
            logger.warning("QP infeasible, certificate rows: %s", ", ".join(support))
        elif status is QpStatus.ITERATION_LIMIT:
            logger.warning("%s hit the iteration limit (%d)", self.name, max_iter)
        return QpSolution(z=raw.z, status=status, multipliers=raw.multipliers,
                          max_violation=violation, stationarity_residual=stationarity,
                          iterations=raw.iterations, certificate=raw.certificate)
