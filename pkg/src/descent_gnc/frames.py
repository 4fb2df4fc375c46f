"""
Rotating-frame 6-DOF spacecraft dynamics.

State layout (12)::

    xi[0:3]   r_a      position, asteroid-fixed frame   [km]
    xi[3:6]   v_a      velocity, asteroid-fixed frame   [km/s]
    xi[6:9]   Theta    321 Euler angles (phi, theta, psi) of body wrt inertial [rad]
    xi[9:12]  omega_b  body rates                       [rad/s]

Control layout (6)::

    u[0:3]    translational force per unit mass, inertial frame [km/s^2]
    u[3:6]    control moments (J^-1 M is taken directly as rad/s^2)

Translational block::

    r_dot = v_a
    v_dot = R_ia(t)^T u + F(r_a) - 2 Omega x v_a - Omega x (Omega x r_a)

Gravity providers already return the acceleration in asteroid-fixed
components, so only the commanded force needs the inertial -> asteroid
rotation.

Rotational block::

    Theta_dot = B(Theta)^-1 omega_b
    omega_dot = J^-1 (M - omega_b x J omega_b)

with ``B = [R_21 R_1i e_1, R_1i e_2, e_3]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .errors import SingularKinematics

GIMBAL_GUARD = 1e-3
B_DET_MIN = 1e-8
GRAVITY_FD_STEP = 1e-6
EULER_FD_STEP = 1e-6

R_SLICE = slice(0, 3)
V_SLICE = slice(3, 6)
THETA_SLICE = slice(6, 9)
OMEGA_SLICE = slice(9, 12)

GravityFn = Callable[[np.ndarray], np.ndarray]


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == cross(a, b)``."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class SpacecraftParams:
    """Rigid-body inertia of the spacecraft."""

    J: np.ndarray
    J_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        if J.shape != (3, 3):
            raise ValueError("inertia must be 3x3")
        if not np.allclose(J, J.T, rtol=0.0, atol=1e-12 * np.abs(J).max()):
            raise ValueError("inertia must be symmetric")
        if np.linalg.eigvalsh(J).min() <= 0.0:
            raise ValueError("inertia must be positive definite")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "J_inv", np.linalg.inv(J))


@dataclass(frozen=True)
class AsteroidRotation:
    """Uniform spin of the asteroid about the inertial z axis."""

    spin_rate: float

    @property
    def omega(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.spin_rate])


@dataclass
class LinearizedSystem:
    """Discrete model matrices evaluated at one estimate.

    ``offset`` is the affine residual of the discrete map at the
    linearization point, so that ``A @ xi + B @ u + offset`` reproduces the
    one-step low-fidelity propagation exactly at ``(xi_hat, u)``.
    """

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    dt: float
    H: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    xi_hat: Optional[np.ndarray] = None
    t: float = 0.0


def rotation_i_to_a(t: float, spin_rate: float) -> np.ndarray:
    """The rotation R_ia at time ``t``; ``R_ia @ v_a`` gives inertial components."""
    c, s = np.cos(spin_rate * t), np.sin(spin_rate * t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_1i(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_21(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_b2(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_b_from_i(Theta) -> np.ndarray:
    """R_bi = R_b2(phi) R_21(theta) R_1i(psi)."""
    phi, theta, psi = Theta
    return rot_b2(phi) @ rot_21(theta) @ rot_1i(psi)


def rotation_b_from_a(Theta, t: float, spin_rate: float) -> np.ndarray:
    return rotation_b_from_i(Theta) @ rotation_i_to_a(t, spin_rate)


def b_matrix(Theta) -> np.ndarray:
    """Euler-rate matrix ``B = [R_21 R_1i e_1, R_1i e_2, e_3]``.

    Its determinant is ``cos(theta) cos(psi)^2 + sin(psi)^2``.
    """
    _, theta, psi = Theta
    R1i = rot_1i(psi)
    B = np.column_stack([
        rot_21(theta) @ R1i[:, 0],
        R1i[:, 1],
        np.array([0.0, 0.0, 1.0]),
    ])
    if abs(np.linalg.det(B)) < B_DET_MIN:
        raise SingularKinematics(f"det B below {B_DET_MIN:g} at Theta={np.asarray(Theta)}")
    return B


def check_gimbal(Theta, guard: float = GIMBAL_GUARD) -> None:
    if abs(Theta[1]) >= np.pi / 2 - guard:
        raise SingularKinematics(f"pitch {Theta[1]:.6f} rad inside gimbal guard band")


def euler_rates(Theta, omega_b) -> np.ndarray:
    """Theta_dot = B^-1 omega_b, with the gimbal guard applied."""
    check_gimbal(Theta)
    return np.linalg.solve(b_matrix(Theta), omega_b)


def plant_derivative(xi, u, gravity: GravityFn, params: SpacecraftParams,
                     rotation: AsteroidRotation, t: float = 0.0) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    r, v = xi[R_SLICE], xi[V_SLICE]
    Theta, w = xi[THETA_SLICE], xi[OMEGA_SLICE]
    Om = rotation.omega
    u_a = rotation_i_to_a(t, rotation.spin_rate).T @ u[:3]
    acc = u_a + gravity(r) - 2.0 * np.cross(Om, v) - np.cross(Om, np.cross(Om, r))
    Jw = params.J @ w
    w_dot = params.J_inv @ (u[3:] - np.cross(w, Jw))
    return np.concatenate([v, acc, euler_rates(Theta, w), w_dot])


def rk4_step(xi, u, dt: float, gravity: GravityFn, params: SpacecraftParams,
             rotation: AsteroidRotation, t: float = 0.0, substeps: int = 1) -> np.ndarray:
    """Classical RK4 over ``dt`` with ``u`` held constant (zero-order hold)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(xi, dtype=float).copy()
    h = dt / substeps
    for i in range(substeps):
        ti = t + i * h
        k1 = plant_derivative(x, u, gravity, params, rotation, ti)
        k2 = plant_derivative(x + 0.5 * h * k1, u, gravity, params, rotation, ti + 0.5 * h)
        k3 = plant_derivative(x + 0.5 * h * k2, u, gravity, params, rotation, ti + 0.5 * h)
        k4 = plant_derivative(x + h * k3, u, gravity, params, rotation, ti + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def gravity_gradient(gravity: GravityFn, r, step: float = GRAVITY_FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of the acceleration field."""
    r = np.asarray(r, dtype=float)
    out = np.empty((3, 3))
    for j in range(3):
        dr = np.zeros(3)
        dr[j] = step
        out[:, j] = (gravity(r + dr) - gravity(r - dr)) / (2.0 * step)
    return out


def linearize_dynamics(xi_hat, u, gravity_low: GravityFn, params: SpacecraftParams,
                       rotation: AsteroidRotation, t: float = 0.0):
    """Continuous Jacobians (A_c, B_c) of the control model at ``(xi_hat, u)``.

    Analytic: kinematics, Coriolis/centrifugal terms, gyroscopic term, inputs.
    Central differences: gravity gradient (1e-6 km) and the Euler-kinematics
    dependence on Theta (1e-6 rad).
    """
    xi_hat = np.asarray(xi_hat, dtype=float)
    r = xi_hat[R_SLICE]
    Theta, w = xi_hat[THETA_SLICE], xi_hat[OMEGA_SLICE]
    Om = skew(rotation.omega)
    J, J_inv = params.J, params.J_inv

    A = np.zeros((12, 12))
    A[R_SLICE, V_SLICE] = np.eye(3)
    A[V_SLICE, R_SLICE] = gravity_gradient(gravity_low, r) - Om @ Om
    A[V_SLICE, V_SLICE] = -2.0 * Om

    B_inv = np.linalg.inv(b_matrix(Theta))
    check_gimbal(Theta)
    for j in range(3):
        dT = np.zeros(3)
        dT[j] = EULER_FD_STEP
        plus = np.linalg.solve(b_matrix(Theta + dT), w)
        minus = np.linalg.solve(b_matrix(Theta - dT), w)
        A[THETA_SLICE, 6 + j] = (plus - minus) / (2.0 * EULER_FD_STEP)
    A[THETA_SLICE, OMEGA_SLICE] = B_inv
    A[OMEGA_SLICE, OMEGA_SLICE] = -J_inv @ (skew(w) @ J - skew(J @ w))

    B = np.zeros((12, 6))
    B[V_SLICE, 0:3] = rotation_i_to_a(t, rotation.spin_rate).T
    B[OMEGA_SLICE, 3:6] = J_inv
    return A, B


def discretize(A_c, B_c, dt: float):
    """Zero-order-hold discretization through the augmented matrix exponential."""
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c.reshape(-1, 1)
    n, m = B_c.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]
