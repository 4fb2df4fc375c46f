"""
Small systems for checking calibration of the stochastic pieces.

``ScalarTestbed`` runs the tube MPC pipeline (gain, ladder, tightening,
condensed QP) on ``x+ = a x + b u + g w`` with a single upper bound on the
state.  ``nees_testbed`` runs the EKF on a mildly nonlinear pendulum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mpc import condense, input_box_rows
from .navigation import EstimateState, ekf_predict, ekf_update
from .qp import solve_qp
from .tube import (
    STATE,
    ConstraintSet,
    chi2_inverse,
    propagate_covariances,
    reduce_to_mpc_sets,
    synthesize_gain,
    tighten_all,
)


@dataclass
class ScalarTestbed:
    a: float = 1.0
    b: float = 1.0
    g: float = 0.05
    bound: float = 1.0
    ref: float = 1.2
    N: int = 5
    beta: float = 0.95
    q: float = 1.0
    r: float = 1.0
    W: float = 1e4
    u_max: float = 10.0
    x0: float = 0.0

    def _controller(self):
        A = np.array([[self.a]])
        B = np.array([[self.b]])
        G = np.array([[self.g]])
        P = np.eye(1)
        Q, R = np.array([[self.q]]), np.array([[self.r]])
        gain = synthesize_gain(A, B, Q, R)
        # state measured exactly at each step: the tube starts from zero covariance
        ladder = propagate_covariances(gain.Phi, G, P, None, None, np.zeros((1, 1)), self.N)
        M, m = input_box_rows([self.u_max])
        cset = ConstraintSet(S=np.array([[1.0]]), s=np.array([self.bound]), labels=[STATE],
                             M=M, m=m, n_out=0)
        y_m, u_m = tighten_all(cset, ladder, gain.K, self.beta)
        tight = reduce_to_mpc_sets(y_m, u_m, cset, None)
        u_ref = (1.0 - self.a) * self.ref / self.b
        return A, B, Q, R, u_ref, tight

    def tightened_bound(self) -> float:
        return float(self._controller()[-1].y_bounds[0])

    def run(self, n_runs: int, n_steps: int, seed: int = 0,
            xs: Optional[np.ndarray] = None) -> np.ndarray:
        """Closed-loop states, shape ``(n_runs, n_steps + 1)``.

        Every run is a separate receding-horizon loop; runs are advanced in
        lockstep so the noise draw order is fixed by ``seed`` alone.
        """
        A, B, Q, R, u_ref, tight = self._controller()
        rng = np.random.default_rng(seed)
        x = np.full(n_runs, self.x0, dtype=float) if xs is None else np.array(xs, dtype=float)
        out = np.empty((n_runs, n_steps + 1))
        out[:, 0] = x
        xr = np.array([self.ref])
        for k in range(n_steps):
            w = rng.standard_normal(n_runs)
            u = np.empty(n_runs)
            for i in range(n_runs):
                cond = condense(A, B, Q, R, self.W, self.N, x[i:i + 1], xr, np.array([u_ref]),
                                tight.y_rows, tight.y_bounds, tight.u_rows, tight.u_bounds)
                sol = solve_qp(cond.qp)
                u[i] = np.clip(u_ref + sol.z[0], -self.u_max, self.u_max)
            x = self.a * x + self.b * u + self.g * w
            out[:, k + 1] = x
        return out

    def violation_rates(self, n_runs: int = 10_000, n_steps: int = 12, seed: int = 0) -> np.ndarray:
        """Per-step frequency of ``x_k > bound`` for k = 1..n_steps."""
        xs = self.run(n_runs, n_steps, seed)
        return np.mean(xs[:, 1:] > self.bound, axis=0)


def binomial_upper(p: float, n: int, sigmas: float = 3.0) -> float:
    return p + sigmas * np.sqrt(p * (1.0 - p) / n)


# --- EKF consistency --------------------------------------------------------------

DT = 0.1
OMEGA2 = 1.0


def _pendulum(x, w=np.zeros(2)):
    return np.array([x[0] + DT * x[1] + w[0], x[1] - DT * OMEGA2 * np.sin(x[0]) + w[1]])


def _pendulum_jac(x):
    return np.array([[1.0, DT], [-DT * OMEGA2 * np.cos(x[0]), 1.0]])


def _sensor(x, v=0.0):
    return np.array([np.sin(x[0]) + v])


def _sensor_jac(x):
    return np.array([[np.cos(x[0]), 0.0]])


@dataclass
class NeesResult:
    nees: np.ndarray      # (n_runs, n_steps)
    mean: np.ndarray      # (n_steps,)
    lower: float
    upper: float

    @property
    def fraction_inside(self) -> float:
        return float(np.mean((self.mean >= self.lower) & (self.mean <= self.upper)))


def nees_testbed(n_runs: int = 200, n_steps: int = 100, seed: int = 0, q: float = 1e-4,
                 r: float = 1e-2, sigma0: float = 1e-2, alpha: float = 0.95) -> NeesResult:
    """Run-averaged NEES of the EKF on a small-angle pendulum with a sine sensor.

    Process and measurement noise enter through a shared 3-vector
    ``n ~ N(0, diag(q, q, r))`` with ``G = [I 0]`` and ``V = [0 0 1]``.
    """
    rng = np.random.default_rng(seed)
    P = np.diag([q, q, r])
    G = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    V = np.array([[0.0, 0.0, 1.0]])
    nees = np.empty((n_runs, n_steps))
    x0_mean = np.array([0.3, 0.0])
    S0 = sigma0 * np.eye(2)
    for i in range(n_runs):
        x = x0_mean + np.sqrt(sigma0) * rng.standard_normal(2)
        est = EstimateState(x0_mean.copy(), S0)
        for k in range(n_steps):
            n = np.sqrt(np.diag(P)) * rng.standard_normal(3)
            x = _pendulum(x, n[:2])
            y = _sensor(x, n[2])
            est = ekf_predict(est, _pendulum_jac(est.xi_hat), G, P, _pendulum)
            est = ekf_update(est, y, _sensor_jac(est.xi_hat), V, P, _sensor(est.xi_hat))
            e = x - est.xi_hat
            nees[i, k] = e @ np.linalg.solve(est.Sigma, e)
    dof = 2 * n_runs
    lower = chi2_inverse((1.0 - alpha) / 2.0, dof) / n_runs
    upper = chi2_inverse(1.0 - (1.0 - alpha) / 2.0, dof) / n_runs
    return NeesResult(nees=nees, mean=nees.mean(axis=0), lower=lower, upper=upper)
