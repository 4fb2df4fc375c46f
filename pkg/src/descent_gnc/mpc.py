"""
Stochastic tube LQMPC: constraint rows, condensation and the per-step law.

Decision vector of the condensed QP::

    z = [dv_0, ..., dv_{N-1}, eps]

with ``dv_k = v_k - u_ref`` and a single scalar slack ``eps >= 0`` relaxing
every output/state row.  Prediction in deviation coordinates::

    dzeta_{k+1} = A dzeta_k + B dv_k + r,   r = A xi_ref + B u_ref + c - xi_ref

where ``c`` is the affine offset of the linearized discrete map (``r = 0``
whenever ``(xi_ref, u_ref)`` is an exact equilibrium of the model).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import RankDeficientB
from .frames import LinearizedSystem
from .navigation import EstimateState
from .qp import OPTIMAL, QpProblem, QpSolution, solve_qp
from .sensors import N_OUT, PIXEL_ROWS, SensorModel
from .tube import (
    FOV,
    STATE,
    ConstraintSet,
    TightenedSet,
    propagate_covariances,
    reduce_to_mpc_sets,
    synthesize_gain,
    tighten_all,
)

OUTPUT_ROW = "output"
INPUT_ROW = "input"
SLACK_ROW = "slack"


@dataclass
class MpcConfig:
    """Horizon, confidence level, weights and constraint bounds.

    ``state_bounds`` maps a state index to ``(lower, upper)``.
    """

    N: int
    beta: float
    Q: np.ndarray
    R: np.ndarray
    W: float
    s_fov: float
    m_trans: float
    m_rot: float
    state_bounds: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    tube_Q: Optional[np.ndarray] = None
    tube_R: Optional[np.ndarray] = None
    dof: Optional[int] = None
    W_l1: float = 0.0
    qp_tol: float = 1e-11
    qp_max_iter: int = 2000

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if np.linalg.eigvalsh(self.Q).min() < 0.0:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        if not self.W > 0.0:
            raise ValueError("W must be positive")
        if self.W_l1 < 0.0:
            raise ValueError("W_l1 must be non-negative")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def input_bounds(self) -> np.ndarray:
        return np.array([self.m_trans] * 3 + [self.m_rot] * 3)

    @property
    def gain_weights(self):
        Qt = self.Q if self.tube_Q is None else np.asarray(self.tube_Q, dtype=float)
        Rt = self.R if self.tube_R is None else np.asarray(self.tube_R, dtype=float)
        return Qt, Rt


def build_fov_rows(xi_0, H, h_0, s_fov: float, n_state: int = 12):
    """Rows of ``S`` and ``s`` for ``|H_fov (xi - xi_0) + h_fov(xi_0)|_inf <= s_fov``.

    ``H`` and ``h_0`` are the full 15-row Jacobian and noise-free output at
    ``xi_0``; rows act on the stacked ``[y; xi]`` vector.
    """
    xi_0 = np.asarray(xi_0, dtype=float)
    pix = range(PIXEL_ROWS.start, PIXEL_ROWS.stop)
    n_pix = len(pix)
    S = np.zeros((2 * n_pix, N_OUT + n_state))
    s = np.empty(2 * n_pix)
    for j, row in enumerate(pix):
        lin = H[row] @ xi_0
        S[2 * j, row] = 1.0
        s[2 * j] = s_fov - h_0[row] + lin
        S[2 * j + 1, row] = -1.0
        s[2 * j + 1] = s_fov + h_0[row] - lin
    return S, s


def build_state_rows(state_bounds: Dict[int, Tuple[float, float]], n_state: int = 12,
                     n_out: int = N_OUT):
    """Box rows ``xi_i <= upper`` and ``-xi_i <= -lower`` for each selected index."""
    rows, bounds = [], []
    for idx in sorted(state_bounds):
        lower, upper = state_bounds[idx]
        up = np.zeros(n_out + n_state)
        up[n_out + idx] = 1.0
        rows.append(up)
        bounds.append(upper)
        lo = np.zeros(n_out + n_state)
        lo[n_out + idx] = -1.0
        rows.append(lo)
        bounds.append(-lower)
    if not rows:
        return np.zeros((0, n_out + n_state)), np.zeros(0)
    return np.array(rows), np.array(bounds, dtype=float)


def equilibrium_control(A, B, xi_ref, offset=None) -> np.ndarray:
    """Least-squares equilibrium input ``(B^T B)^-1 B^T ((I - A) xi_ref - c)``."""
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if np.linalg.matrix_rank(B) < B.shape[1]:
        raise RankDeficientB("B^T B is singular")
    target = (np.eye(A.shape[0]) - A) @ np.asarray(xi_ref, dtype=float)
    if offset is not None:
        target = target - offset
    return np.linalg.solve(B.T @ B, B.T @ target)


@dataclass
class Condensed:
    qp: QpProblem
    free: np.ndarray       # stacked dzeta_1..N with dv = 0, shape (N, n)
    gamma: np.ndarray      # d(dzeta_1..N)/d(dv), shape (N*n, N*m)
    n_rows_output: int
    n_rows_input: int


def condense(A, B, Q, R, W: float, N: int, xi_hat, xi_ref, u_ref,
             y_rows, y_bounds, u_rows, u_bounds, offset=None, W_l1: float = 0.0) -> Condensed:
    """Dense QP over ``z = [dv_0..dv_{N-1}, eps]``.

    The slack costs ``W eps^2 + W_l1 eps``; a large enough linear weight makes
    the penalty exact, so ``eps`` stays zero whenever the rows are satisfiable.

    Output/state rows ``C zeta_k <= b + eps`` apply for k = 1..N; input rows
    ``M v_k <= m`` for k = 0..N-1 are hard.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    xi_ref = np.asarray(xi_ref, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    c = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    r = A @ xi_ref + B @ u_ref + c - xi_ref

    # free response and input-to-state blocks
    free = np.empty((N, n))
    x = np.asarray(xi_hat, dtype=float) - xi_ref
    powers_B = [B]
    for k in range(N):
        x = A @ x + r
        free[k] = x
        if k:
            powers_B.append(A @ powers_B[-1])
    gamma = np.zeros((N * n, N * m))
    for k in range(N):
        for j in range(k + 1):
            gamma[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers_B[k - j]

    nz = N * m + 1
    Qbar_gamma = np.vstack([Q @ gamma[k * n:(k + 1) * n] for k in range(N)])
    H = np.zeros((nz, nz))
    H[:N * m, :N * m] = 2.0 * (gamma.T @ Qbar_gamma + np.kron(np.eye(N), R))
    H[-1, -1] = 2.0 * W
    H = 0.5 * (H + H.T)
    grad = np.zeros(nz)
    grad[:N * m] = 2.0 * (Qbar_gamma.T @ free.reshape(-1))
    grad[-1] = W_l1
    dz0 = np.asarray(xi_hat, dtype=float) - xi_ref
    const = float(dz0 @ Q @ dz0 + sum(f @ Q @ f for f in free))

    y_rows = np.atleast_2d(y_rows) if y_rows is not None and np.size(y_rows) else np.zeros((0, n))
    u_rows = np.atleast_2d(u_rows) if u_rows is not None and np.size(u_rows) else np.zeros((0, m))
    d, du = y_rows.shape[0], u_rows.shape[0]
    blocks, rhs, labels = [], [], []
    if d:
        for k in range(N):
            G_k = gamma[k * n:(k + 1) * n]
            row = np.zeros((d, nz))
            row[:, :N * m] = y_rows @ G_k
            row[:, -1] = -1.0
            blocks.append(row)
            rhs.append(y_bounds - y_rows @ (xi_ref + free[k]))
            labels += [OUTPUT_ROW] * d
    if du:
        for k in range(N):
            row = np.zeros((du, nz))
            row[:, k * m:(k + 1) * m] = u_rows
            blocks.append(row)
            rhs.append(u_bounds - u_rows @ u_ref)
            labels += [INPUT_ROW] * du
    slack = np.zeros((1, nz))
    slack[0, -1] = -1.0
    blocks.append(slack)
    rhs.append(np.zeros(1))
    labels.append(SLACK_ROW)
    qp = QpProblem(H, grad, np.vstack(blocks), np.concatenate(rhs), labels, const)
    return Condensed(qp=qp, free=free, gamma=gamma, n_rows_output=d * N, n_rows_input=du * N)


def input_box_rows(bounds) -> Tuple[np.ndarray, np.ndarray]:
    bounds = np.asarray(bounds, dtype=float)
    m = bounds.size
    M = np.vstack([np.eye(m), -np.eye(m)])
    return M, np.concatenate([bounds, bounds])


@dataclass
class MpcResult:
    u: np.ndarray
    v0: np.ndarray
    u_ref: np.ndarray
    eps: float
    solution: QpSolution
    tightened: TightenedSet
    spectral_radius: float
    saturated: bool
    ladder_change: float
    margins_fov_max: float
    margins_state: np.ndarray
    predicted: np.ndarray


def build_constraint_set(xi_0, lin: LinearizedSystem, h_0, config: MpcConfig) -> ConstraintSet:
    S_fov, s_fov = build_fov_rows(xi_0, lin.H, h_0, config.s_fov)
    S_x, s_x = build_state_rows(config.state_bounds)
    M, m = input_box_rows(config.input_bounds)
    labels = [FOV] * len(s_fov) + [STATE] * len(s_x)
    return ConstraintSet(S=np.vstack([S_fov, S_x]), s=np.concatenate([s_fov, s_x]),
                         labels=labels, M=M, m=m, n_out=N_OUT)


def mpc_step(est: EstimateState, lin: LinearizedSystem, xi_ref, sensors: SensorModel,
             config: MpcConfig, P) -> MpcResult:
    """One receding-horizon step: tube gain, ladder, tightening, QP, applied input.

    The tube error at k = 0 is zero because the prediction starts at the
    estimate, so the applied input is the first nominal input ``v_0``.
    """
    xi_hat = est.xi_hat
    Qt, Rt = config.gain_weights
    gain = synthesize_gain(lin.A, lin.B, Qt, Rt)
    ladder = propagate_covariances(gain.Phi, lin.G, P, lin.H, lin.V, est.Sigma, config.N)
    h_0 = sensors.measure(xi_hat, None, lin.t)
    cset = build_constraint_set(xi_hat, lin, h_0, config)
    y_m, u_m = tighten_all(cset, ladder, gain.K, config.beta, config.dof)
    tight = reduce_to_mpc_sets(y_m, u_m, cset, lin.H)

    u_ref = equilibrium_control(lin.A, lin.B, xi_ref, lin.offset)
    cond = condense(lin.A, lin.B, config.Q, config.R, config.W, config.N, xi_hat, xi_ref,
                    u_ref, tight.y_rows, tight.y_bounds, tight.u_rows, tight.u_bounds,
                    lin.offset, config.W_l1)
    sol = solve_qp(cond.qp, config.qp_tol, config.qp_max_iter)
    m = lin.B.shape[1]
    dv = sol.z[:config.N * m].reshape(config.N, m)
    v0 = u_ref + dv[0]
    bounds = config.input_bounds
    u = np.clip(v0, -bounds, bounds)
    predicted = xi_ref + cond.free + (cond.gamma @ sol.z[:-1]).reshape(config.N, -1)

    fov_idx = [i for i, lab in enumerate(cset.labels) if lab == FOV]
    st_idx = [i for i, lab in enumerate(cset.labels) if lab == STATE]
    worst = y_m.max(axis=0)
    return MpcResult(
        u=u, v0=v0, u_ref=u_ref, eps=float(sol.z[-1]), solution=sol, tightened=tight,
        spectral_radius=gain.spectral_radius, saturated=bool(np.any(u != v0)),
        ladder_change=float(np.linalg.norm(ladder.Xi[-1] - ladder.Xi[-2])),
        margins_fov_max=float(worst[fov_idx].max()) if fov_idx else 0.0,
        margins_state=worst[st_idx], predicted=predicted)
