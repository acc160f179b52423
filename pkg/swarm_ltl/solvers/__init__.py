from .abc import AbstractQpSolver, QpProblem, QpSolution, QpStatus, RawResult, RowTag
from .active_set import DualActiveSetSolver

__all__ = ("AbstractQpSolver", "DualActiveSetSolver", "QpProblem", "QpSolution", "QpStatus",
           "RawResult", "RowTag")
