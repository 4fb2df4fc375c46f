"""
Error tube: stabilizing gain, covariance ladder over the horizon and
confidence-ellipsoid constraint tightening.

For a Gaussian error with covariance ``C`` (rank ``p``) the support function
of the ``beta`` confidence ellipsoid in direction ``eta`` is::

    h(eta) = sqrt(chi2_inv(beta, p)) * sqrt(eta^T C eta)
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import gammainc

from .errors import DomainError, NotStabilizable

FOV = "fov"
STATE = "xi"


@dataclass(frozen=True)
class TubeGain:
    K: np.ndarray
    Phi: np.ndarray
    spectral_radius: float
    P_riccati: Optional[np.ndarray] = None


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


def _doubling_step(A, G, H, I):
    W = I + G @ H
    W_A = np.linalg.solve(W, A)
    W_G = np.linalg.solve(W, G)
    H_next = H + A.T @ H @ W_A
    return A @ W_A, G + A @ W_G @ A.T, 0.5 * (H_next + H_next.T)


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Stabilizing DARE solution by the structure-preserving doubling iteration."""
    A_k = np.array(A, dtype=float)
    G_k = B @ np.linalg.solve(R, B.T)
    H_k = np.array(Q, dtype=float)
    n = A_k.shape[0]
    I = np.eye(n)
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            A_k, G_k, H_next = _doubling_step(A_k, G_k, H_k, I)
        if not np.all(np.isfinite(H_next)):
            raise NotStabilizable("Riccati iteration diverged")
        change = np.max(np.abs(H_next - H_k))
        H_k = H_next
        if change <= tol * max(1.0, np.max(np.abs(H_k))):
            return H_k
    raise NotStabilizable("Riccati iteration did not reach a fixed point")


def synthesize_gain(A, B, Q, R) -> TubeGain:
    """LQR gain with the convention ``Phi = A + B K``; raises unless Phi is Schur."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if not np.any(B):
        K = np.zeros((B.shape[1], A.shape[0]))
        X = None
    else:
        X = solve_dare(A, B, Q, R)
        K = -np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    Phi = A + B @ K
    rho = spectral_radius(Phi)
    if not rho < 1.0:
        raise NotStabilizable(f"closed-loop spectral radius {rho:.6f} >= 1")
    return TubeGain(K=K, Phi=Phi, spectral_radius=rho, P_riccati=X)


@dataclass
class CovarianceLadder:
    """State- and output-error covariances for k = 0..N."""

    Xi: np.ndarray
    Upsilon: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.Xi.shape[0] - 1


def propagate_covariances(Phi, G, P, H, V, Sigma, N: int) -> CovarianceLadder:
    if N < 1:
        raise ValueError("horizon must be at least 1")
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    GPG = G @ P @ G.T
    n = Phi.shape[0]
    Xi = np.empty((N + 1, n, n))
    Xi[0] = Sigma
    for k in range(N):
        nxt = Phi @ Xi[k] @ Phi.T + GPG
        Xi[k + 1] = 0.5 * (nxt + nxt.T)
    Upsilon = None
    if H is not None:
        VPV = V @ P @ V.T
        Upsilon = np.einsum("ij,kjl,ml->kim", H, Xi, H) + VPV
        Upsilon = 0.5 * (Upsilon + Upsilon.transpose(0, 2, 1))
    return CovarianceLadder(Xi=Xi, Upsilon=Upsilon)


@functools.lru_cache(maxsize=256)
def chi2_inverse(beta: float, p: int, tol: float = 1e-12) -> float:
    """Chi-squared quantile by bisection on the regularized lower incomplete gamma."""
    if not 0.0 < beta < 1.0:
        raise DomainError("beta must lie in (0, 1)")
    if int(p) != p or p < 1:
        raise DomainError("degrees of freedom must be a positive integer")
    half = 0.5 * p
    lo, hi = 0.0, max(1.0, float(p))
    while gammainc(half, 0.5 * hi) < beta:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gammainc(half, 0.5 * mid) < beta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def covariance_rank(C) -> int:
    C = np.atleast_2d(C)
    if not np.any(C):
        return 0
    return int(np.linalg.matrix_rank(C, hermitian=True))


def support_margin(direction, C, beta: float, dof: Optional[int] = None) -> float:
    """``sqrt(chi2_inv(beta, p)) * sqrt(eta^T C eta)`` with p = rank(C) by default."""
    eta = np.asarray(direction, dtype=float)
    q = float(eta @ C @ eta)
    p = covariance_rank(C) if dof is None else dof
    if q <= 0.0 or p == 0:
        return 0.0
    return float(np.sqrt(chi2_inverse(beta, p)) * np.sqrt(q))


def tighten_output_row(S_i, partition: str, ladder: CovarianceLadder, k: int, beta: float,
                       n_out: Optional[int] = None, dof: Optional[int] = None) -> float:
    """Margin for one row of ``S`` acting on the stacked ``[output; state]`` vector."""
    S_i = np.asarray(S_i, dtype=float)
    if n_out is None:
        n_out = 0 if ladder.Upsilon is None else ladder.Upsilon.shape[1]
    if partition == FOV:
        return support_margin(S_i[:n_out], ladder.Upsilon[k], beta, dof)
    if partition == STATE:
        return support_margin(S_i[n_out:], ladder.Xi[k], beta, dof)
    raise ValueError(f"unknown partition {partition!r}")


def tighten_input_row(M_i, K, Xi_k, beta: float, dof: Optional[int] = None) -> float:
    KXK = K @ Xi_k @ K.T
    return support_margin(M_i, KXK, beta, dof)


@dataclass
class ConstraintSet:
    """Polytopic constraints ``S [y; xi] <= s`` and ``M u <= m``."""

    S: np.ndarray
    s: np.ndarray
    labels: List[str]
    M: np.ndarray
    m: np.ndarray
    n_out: int

    def state_rows(self, H) -> np.ndarray:
        """Rows expressed directly on the state: ``S [H; I]``."""
        n = self.S.shape[1] - self.n_out
        if self.S.shape[0] == 0:
            return np.zeros((0, n))
        if self.n_out == 0:
            return self.S.copy()
        return self.S[:, :self.n_out] @ H + self.S[:, self.n_out:]


@dataclass
class TightenedSet:
    y_rows: np.ndarray          # kept output/state rows, on the state (d_kept, n)
    y_bounds: np.ndarray
    y_labels: List[str]
    y_index: np.ndarray          # indices of kept rows in the original set
    u_rows: np.ndarray
    u_bounds: np.ndarray
    y_margins: np.ndarray        # (N+1, d) before reduction
    u_margins: np.ndarray        # (N+1, d_u)
    max_at_horizon: bool
    empty: bool = False
    empty_inputs: bool = False


def tighten_all(cset: ConstraintSet, ladder: CovarianceLadder, K, beta: float,
                dof: Optional[int] = None):
    """Margins for every row and every k = 0..N (vectorized over rows)."""
    N = ladder.horizon
    n_out = cset.n_out
    labels = np.array(cset.labels)
    fov = labels == FOV
    st = labels == STATE
    S_out, S_st = cset.S[fov, :n_out], cset.S[st, n_out:]
    y_m = np.zeros((N + 1, cset.S.shape[0]))
    u_m = np.zeros((N + 1, cset.M.shape[0]))

    def scaled(rows, C):
        q = np.einsum("ij,jk,ik->i", rows, C, rows)
        p = covariance_rank(C) if dof is None else dof
        if p == 0:
            return np.zeros(rows.shape[0])
        return np.sqrt(chi2_inverse(beta, p)) * np.sqrt(np.clip(q, 0.0, None))

    for k in range(N + 1):
        if fov.any():
            y_m[k, fov] = scaled(S_out, ladder.Upsilon[k])
        if st.any():
            y_m[k, st] = scaled(S_st, ladder.Xi[k])
        if cset.M.shape[0]:
            u_m[k] = scaled(cset.M, K @ ladder.Xi[k] @ K.T)
    return y_m, u_m


def _drop_redundant(rows, bounds):
    """Keep the tightest bound among rows with identical coefficients."""
    keep = {}
    for i in range(rows.shape[0]):
        key = (rows[i] + 0.0).tobytes()
        if key not in keep or bounds[i] < bounds[keep[key]]:
            keep[key] = i
    return np.array(sorted(keep.values()), dtype=int)


def _mirror_pairs(rows):
    index = {(rows[i] + 0.0).tobytes(): i for i in range(rows.shape[0])}
    pairs = []
    for i in range(rows.shape[0]):
        j = index.get((-rows[i] + 0.0).tobytes())
        if j is not None and i < j:
            pairs.append((i, j))
    return pairs


def reduce_to_mpc_sets(y_margins, u_margins, cset: ConstraintSet, H) -> TightenedSet:
    """Row-wise intersection over k, redundancy removal and emptiness check.

    An output row pair whose tightened bounds cross is flagged (the MPC slack
    absorbs it).  A crossing input pair is collapsed to its midpoint so the
    hard input rows stay feasible.
    """
    y_margins = np.atleast_2d(y_margins)
    u_margins = np.atleast_2d(u_margins)
    worst_y = y_margins.max(axis=0) if y_margins.size else np.zeros(0)
    worst_u = u_margins.max(axis=0) if u_margins.size else np.zeros(0)
    at_N = bool(np.all(y_margins[-1] >= worst_y) and np.all(u_margins[-1] >= worst_u))

    rows = cset.state_rows(H)
    bounds = cset.s - worst_y
    kept = _drop_redundant(rows, bounds)
    y_rows, y_bounds = rows[kept], bounds[kept]
    empty = any(y_bounds[i] + y_bounds[j] < 0.0 for i, j in _mirror_pairs(y_rows))

    u_bounds = cset.m - worst_u
    u_rows = cset.M.copy()
    empty_inputs = False
    for i, j in _mirror_pairs(u_rows):
        if u_bounds[i] + u_bounds[j] < 0.0:
            empty_inputs = True
            mid = 0.5 * (u_bounds[i] - u_bounds[j])
            u_bounds[i], u_bounds[j] = mid, -mid
    return TightenedSet(
        y_rows=y_rows, y_bounds=y_bounds, y_labels=[cset.labels[i] for i in kept],
        y_index=kept, u_rows=u_rows, u_bounds=u_bounds,
        y_margins=y_margins, u_margins=u_margins, max_at_horizon=at_N,
        empty=empty or empty_inputs, empty_inputs=empty_inputs)
