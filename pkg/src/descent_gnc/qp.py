"""
Dense convex QP solver::

    minimize    0.5 z^T H z + g^T z
    subject to  A z <= b

Dual active-set method of Goldfarb and Idnani.  Every iterate is the exact
minimizer over a growing working set, so iterates stay dual feasible and the
objective is non-decreasing until the first primal-feasible point, which is
optimal.  The problem is equilibrated first (unit Hessian diagonal, unit row
norms); KKT residuals are reported on that equilibrated problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, solve_triangular

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_labels: Optional[List[str]] = None
    constant: float = 0.0

    @property
    def n(self) -> int:
        return self.hessian.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.hessian @ z + self.gradient @ z + self.constant)


@dataclass
class QpSolution:
    z: np.ndarray
    lam: np.ndarray
    status: str
    kkt: Dict[str, float]
    iterations: int
    active: np.ndarray
    objective_trace: List[float] = field(default_factory=list)

    @property
    def kkt_max(self) -> float:
        return max(self.kkt.values()) if self.kkt else 0.0


def _equilibrate(qp: QpProblem):
    H = 0.5 * (qp.hessian + qp.hessian.T)
    diag = np.diag(H).copy()
    d = np.where(diag > 0.0, 1.0 / np.sqrt(np.where(diag > 0.0, diag, 1.0)), 1.0)
    Hs = H * np.outer(d, d)
    gs = qp.gradient * d
    As = qp.A * d[None, :]
    row = np.linalg.norm(As, axis=1)
    row = np.where(row > 0.0, row, 1.0)
    return Hs, gs, As / row[:, None], qp.b / row, d, row


def kkt_residuals(H, g, A, b, z, lam) -> Dict[str, float]:
    """Stationarity, primal, dual feasibility and complementarity (inf-norms)."""
    slack = A @ z - b if A.shape[0] else np.zeros(0)
    stat = H @ z + g + (A.T @ lam if A.shape[0] else 0.0)
    scale = max(1.0, np.max(np.abs(g)) if g.size else 0.0)
    bscale = np.maximum(1.0, np.abs(b))
    return {
        "stationarity": float(np.max(np.abs(stat)) / scale) if stat.size else 0.0,
        "primal": float(np.max(np.maximum(slack, 0.0) / bscale)) if slack.size else 0.0,
        "dual": float(np.max(np.maximum(-lam, 0.0))) if lam.size else 0.0,
        "complementarity": float(np.max(np.abs(lam * slack) / bscale)) if slack.size else 0.0,
    }


def solve_qp(qp: QpProblem, tol: float = 1e-11, max_iter: int = 2000) -> QpSolution:
    """Solve a strictly convex QP (positive definite Hessian).

    A merely semidefinite Hessian receives a ridge of ``1e-12`` times its
    largest diagonal entry after equilibration.
    """
    H, g, A, b, d, row = _equilibrate(qp)
    n, m = H.shape[0], A.shape[0]
    try:
        chol = cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        H = H + 1e-12 * max(1.0, np.max(np.diag(H))) * np.eye(n)
        chol = cho_factor(H, lower=True)
    L = np.tril(chol[0])
    J0 = solve_triangular(L, np.eye(n), lower=True).T  # H^-1 = J0 J0^T

    z = -cho_solve(chol, g)
    normals = -A            # constraints as normals^T z >= -b
    rhs = -b
    active: List[int] = []
    u = np.zeros(0)
    trace = [float(0.5 * z @ H @ z + g @ z)]
    status = OPTIMAL
    it = 0
    feas_tol = tol * (1.0 + np.abs(rhs))

    while True:
        if m == 0:
            break
        s = normals @ z - rhs
        s[active] = np.inf
        p = int(np.argmin(s))
        if s[p] >= -feas_tol[p]:
            break
        n_p = normals[p]
        u_plus = np.append(u, 0.0)
        added = False
        while not added:
            it += 1
            if it > max_iter:
                status = MAX_ITER
                break
            q = len(active)
            if q:
                Qf, Rf = qr(J0.T @ normals[active].T, mode="full", check_finite=False)
                J = J0 @ Qf
                R = Rf[:q, :q]
            else:
                J = J0
            dvec = J.T @ n_p
            zdir = J[:, q:] @ dvec[q:]
            r = solve_triangular(R, dvec[:q], check_finite=False) if q else np.zeros(0)

            t1, drop = np.inf, None
            for j in range(q):
                if r[j] > 0.0:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, drop = ratio, j
            curvature = float(zdir @ n_p)
            if np.linalg.norm(zdir) > 1e-13 * max(1.0, np.linalg.norm(dvec)) and curvature > 0.0:
                t2 = -(n_p @ z - rhs[p]) / curvature
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                status = INFEASIBLE
                break
            if np.isfinite(t2):
                z = z + t * zdir
                trace.append(float(0.5 * z @ H @ z + g @ z))
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t == t2:
                active.append(p)
                u = u_plus
                added = True
            else:
                del active[drop]
                u_plus = np.delete(u_plus, drop)
        if status != OPTIMAL:
            break

    lam_s = np.zeros(m)
    if active and status == OPTIMAL:
        lam_s[active] = u
    elif active:
        lam_s[active] = u_plus[:len(active)] if len(u_plus) > len(active) else u
    kkt = kkt_residuals(H, g, A, b, z, lam_s)
    return QpSolution(z=z * d, lam=lam_s / row, status=status, kkt=kkt, iterations=it,
                      active=np.array(sorted(active), dtype=int), objective_trace=trace)
