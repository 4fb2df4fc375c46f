"""Discrete extended Kalman filter with non-additive noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import SingularInnovation
from .frames import (
    AsteroidRotation,
    LinearizedSystem,
    SpacecraftParams,
    discretize,
    linearize_dynamics,
    rk4_step,
)
from .gravity import GravityProvider
from .sensors import SensorModel

MAX_INNOVATION_COND = 1e12


@dataclass
class EstimateState:
    xi_hat: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        self.xi_hat = np.asarray(self.xi_hat, dtype=float)
        self.Sigma = symmetrize(np.asarray(self.Sigma, dtype=float))


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def ekf_predict(est: EstimateState, A, G, P, propagate: Callable[[np.ndarray], np.ndarray]) -> EstimateState:
    """Mean through ``propagate``; covariance ``A Sigma A^T + G P G^T``."""
    Sigma = A @ est.Sigma @ A.T + G @ P @ G.T
    return EstimateState(propagate(est.xi_hat), Sigma)


def innovation_condition(S: np.ndarray) -> float:
    """Condition number of S after symmetric diagonal equilibration."""
    d = np.sqrt(np.clip(np.diag(S), np.finfo(float).tiny, None))
    return float(np.linalg.cond(S / np.outer(d, d)))


def ekf_update(est_minus: EstimateState, y, H, V, P, h_at_mean) -> EstimateState:
    """Joseph-form measurement update with output noise covariance ``V P V^T``."""
    Sm = est_minus.Sigma
    VPV = V @ P @ V.T
    S = symmetrize(H @ Sm @ H.T + VPV)
    if not np.any(S) and not np.any(H @ Sm):
        # no uncertainty anywhere: the measurement carries no correction
        return EstimateState(est_minus.xi_hat.copy(), Sm)
    if not np.all(np.isfinite(S)) or innovation_condition(S) > MAX_INNOVATION_COND:
        raise SingularInnovation("innovation covariance ill-conditioned")
    K = np.linalg.solve(S, H @ Sm).T
    innov = np.asarray(y, dtype=float) - np.asarray(h_at_mean, dtype=float)
    I_KH = np.eye(Sm.shape[0]) - K @ H
    Sigma = I_KH @ Sm @ I_KH.T + K @ VPV @ K.T
    return EstimateState(est_minus.xi_hat + K @ innov, Sigma)


@dataclass(frozen=True)
class ControlModel:
    """Everything the filter and the MPC share: f-hat, h, G and P."""

    params: SpacecraftParams
    rotation: AsteroidRotation
    gravity: GravityProvider
    sensors: SensorModel
    G: np.ndarray
    P: np.ndarray
    dt: float

    def propagate(self, xi, u, t: float) -> np.ndarray:
        return rk4_step(xi, u, self.dt, self.gravity, self.params, self.rotation, t)

    def linearize(self, xi_hat, u, t: float) -> LinearizedSystem:
        """A, B, H, V at ``xi_hat`` plus the affine offset of the discrete map."""
        A_c, B_c = linearize_dynamics(xi_hat, u, self.gravity, self.params, self.rotation, t)
        A, B = discretize(A_c, B_c, self.dt)
        H, V = self.sensors.jacobians(xi_hat, t)
        offset = self.propagate(xi_hat, u, t) - A @ xi_hat - B @ u
        return LinearizedSystem(A=A, B=B, G=self.G, dt=self.dt, H=H, V=V,
                                offset=offset, xi_hat=np.array(xi_hat, dtype=float), t=t)


def ekf_step(est: EstimateState, u, y, model: ControlModel, t: float,
             lin: Optional[LinearizedSystem] = None):
    """Predict from ``t - dt`` (if ``lin`` is given), update with ``y`` at ``t``,
    then relinearize at the posterior for the controller.

    ``lin`` must be the snapshot returned by the previous call, i.e. the
    linearization at the previous posterior; its ``A`` drives the covariance
    prediction so filter and controller share one evaluation.
    """
    u = np.asarray(u, dtype=float)
    if lin is not None:
        est = ekf_predict(est, lin.A, model.G, model.P,
                          lambda x: model.propagate(x, u, t - model.dt))
    H, V = model.sensors.jacobians(est.xi_hat, t)
    h0 = model.sensors.measure(est.xi_hat, None, t)
    post = ekf_update(est, y, H, V, model.P, h0)
    return post, model.linearize(post.xi_hat, u, t)
