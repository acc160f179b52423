"""Dense dual active-set QP solver (Goldfarb and Idnani).

Starts from the unconstrained minimizer and adds the most violated row at each
major iteration while keeping the iterate dual feasible. When no primal or
dual step is possible the violated row is a nonnegative combination of the
active rows, which yields a Farkas certificate.
"""

import logging
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .abc import AbstractQpSolver, QpStatus, RawResult, Vector

logger = logging.getLogger(__name__)

_EPS = 1e-12


class DualActiveSetSolver(AbstractQpSolver):
    name = "dual-active-set"

    def minimize(self, G: NDArray[np.float64], q: Vector, A: NDArray[np.float64], b: Vector,
                 max_iter: int) -> RawResult:
        m = A.shape[0]
        L = np.linalg.cholesky(G)
        z = -cho_solve(cho_factor(G, lower=True), q)
        norms = np.linalg.norm(A, axis=1)
        zero_rows = norms == 0
        norms[zero_rows] = 1.0
        stop_tol = self.feas_tol / 10

        active: list[int] = []
        u = np.zeros(0)
        iterations = 0

        def result(status: QpStatus, certificate: Optional[Vector] = None) -> RawResult:
            lam = np.zeros(m)
            lam[active] = u
            return RawResult(z, status, lam, iterations, certificate)

        while True:
            slack = A @ z - b
            violated = slack > stop_tol
            if np.any(violated & zero_rows):
                # 0 <= b_k < 0 for a zero row.
                certificate = np.zeros(m)
                certificate[np.flatnonzero(violated & zero_rows)[0]] = 1.0
                return result(QpStatus.INFEASIBLE, certificate)
            if not np.any(violated):
                return result(QpStatus.OPTIMAL)
            scaled = np.where(violated, slack / norms, -np.inf)
            p = int(np.argmax(scaled))
            n_p = -A[p]
            u_p = 0.0

            while True:
                iterations += 1
                if iterations > max_iter:
                    return result(QpStatus.ITERATION_LIMIT)
                w = solve_triangular(L, n_p, lower=True)
                if active:
                    B = solve_triangular(L, -A[active].T, lower=True)
                    r = np.linalg.lstsq(B, w, rcond=None)[0]
                    resid = w - B @ r
                else:
                    r = np.zeros(0)
                    resid = w
                step = solve_triangular(L.T, resid, lower=False)

                # Partial step: largest dual move keeping active multipliers >= 0.
                t1, k = np.inf, -1
                for j in np.flatnonzero(r > _EPS):
                    if u[j] / r[j] < t1:
                        t1, k = u[j] / r[j], int(j)

                # Full step: makes row p active.
                denom = float(resid @ resid)
                s_p = float(n_p @ z + b[p])
                t2 = -s_p / denom if denom > _EPS * max(1.0, float(w @ w)) else np.inf

                t = min(t1, t2)
                if np.isinf(t):
                    # n_p = sum r_j n_j with all r_j <= 0 contradicts row p.
                    certificate = np.zeros(m)
                    certificate[active] = np.maximum(-r, 0.0)
                    certificate[p] = 1.0
                    return result(QpStatus.INFEASIBLE, certificate)

                if not np.isinf(t2):
                    z = z + t * step
                u = u - t * r
                u_p += t

                if t == t2:
                    active.append(p)
                    u = np.append(u, u_p)
                    break
                # Drop the blocking row and retry p.
                del active[k]
                u = np.delete(u, k)
