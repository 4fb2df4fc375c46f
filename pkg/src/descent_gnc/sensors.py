"""
Measurement model: lidar ranges, pinhole-camera pixels and gyro rates.

Noise vector layout (16)::

    n[0:12]   N_1..N_4   range-vector corruption, one 3-vector per feature
    n[12]     N_c        additive perturbation of the projective scale
    n[13:16]  N_b        gyro noise

Output layout (15)::

    y[0:4]    lidar ranges to features 1..4 [km]
    y[4:12]   pixel pairs (c1, c2) of features 1..4
    y[12:15]  measured body rates [rad/s]

Camera boresight is body +z.  A feature in front of the camera has a
negative body-z component of ``d_b = R_ba (r_a - p_a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, DomainError, NoVisibleFeature

N_FEATURES = 4
N_OUT = 15
N_NOISE = 16
RANGE_ROWS = slice(0, 4)
PIXEL_ROWS = slice(4, 12)
RATE_ROWS = slice(12, 15)
PROJECTION_MIN = 1e-9
FD_STEP = 1e-7
TIE_TOL = 1e-12


def relative_vector_body(r_a, p_a_k, R_ba) -> np.ndarray:
    return np.asarray(R_ba) @ (np.asarray(r_a, dtype=float) - np.asarray(p_a_k, dtype=float))


def misalignment_gain(d_b) -> float:
    """``1 - (-d_b/|d_b|) . e_z``: 0 on boresight, 1 orthogonal, 2 behind."""
    d_b = np.asarray(d_b, dtype=float)
    norm = np.linalg.norm(d_b)
    if norm == 0.0:
        raise DomainError("misalignment gain undefined for a zero vector")
    return 1.0 + d_b[2] / norm


def corrupted_vector(d_b, N_k) -> np.ndarray:
    return np.asarray(d_b, dtype=float) + misalignment_gain(d_b) * np.asarray(N_k, dtype=float)


def lidar_range(d_hat_b) -> float:
    return float(np.linalg.norm(d_hat_b))


def camera_pixels(d_hat_b, f_len: float, N_c: float = 0.0) -> np.ndarray:
    d_hat_b = np.asarray(d_hat_b, dtype=float)
    if abs(d_hat_b[2]) < PROJECTION_MIN:
        raise DegenerateProjection(f"feature depth {d_hat_b[2]:.3g} km in focal plane")
    return (f_len / d_hat_b[2] + N_c) * d_hat_b[:2]


def _rotations_b_from_a(Theta: np.ndarray, t: float, spin_rate: float) -> np.ndarray:
    """Batched R_ba for Theta of shape (B, 3)."""
    phi, th, psi = Theta[:, 0], Theta[:, 1], Theta[:, 2]
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(psi), np.sin(psi)
    R = np.empty((Theta.shape[0], 3, 3))
    R[:, 0, 0] = ct * cp
    R[:, 0, 1] = -ct * sp
    R[:, 0, 2] = st
    R[:, 1, 0] = cf * sp + sf * st * cp
    R[:, 1, 1] = cf * cp - sf * st * sp
    R[:, 1, 2] = -sf * ct
    R[:, 2, 0] = sf * sp - cf * st * cp
    R[:, 2, 1] = sf * cp + cf * st * sp
    R[:, 2, 2] = cf * ct
    c, s = np.cos(spin_rate * t), np.sin(spin_rate * t)
    R_ia = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return R @ R_ia


def body_vectors(xi, features, t: float, spin_rate: float) -> np.ndarray:
    """Noise-free d_b^k for a batch of states; shape (B, 4, 3)."""
    xi = np.atleast_2d(xi)
    R_ba = _rotations_b_from_a(xi[:, 6:9], t, spin_rate)
    d_a = xi[:, None, 0:3] - np.asarray(features)[None, :, :]
    return np.einsum("bij,bkj->bki", R_ba, d_a)


def measure_batch(xi, n, features, f_len: float, t: float, spin_rate: float) -> np.ndarray:
    """Vectorized measurement model; ``xi`` (B,12), ``n`` (B,16) -> (B,15)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    d_b = body_vectors(xi, features, t, spin_rate)
    norm = np.linalg.norm(d_b, axis=2)
    if np.any(norm == 0.0):
        raise DomainError("spacecraft coincides with a feature point")
    gain = 1.0 + d_b[:, :, 2] / norm
    d_hat = d_b + gain[:, :, None] * n[:, 0:12].reshape(-1, N_FEATURES, 3)
    depth = d_hat[:, :, 2]
    if np.any(np.abs(depth) < PROJECTION_MIN):
        raise DegenerateProjection("feature depth in focal plane")
    scale = f_len / depth + n[:, 12:13]
    pixels = scale[:, :, None] * d_hat[:, :, 0:2]
    out = np.empty((xi.shape[0], N_OUT))
    out[:, RANGE_ROWS] = np.linalg.norm(d_hat, axis=2)
    out[:, PIXEL_ROWS] = pixels.reshape(-1, 2 * N_FEATURES)
    out[:, RATE_ROWS] = xi[:, 9:12] + n[:, 13:16]
    return out


@dataclass(frozen=True)
class SensorModel:
    """Feature geometry, camera focal length and asteroid spin needed by ``h``."""

    features: np.ndarray
    f_len: float
    spin_rate: float

    def __post_init__(self):
        p = np.asarray(self.features, dtype=float)
        if p.shape != (N_FEATURES, 3):
            raise ValueError("exactly four 3-D feature points required")
        for i in range(N_FEATURES):
            for j in range(i + 1, N_FEATURES):
                if np.array_equal(p[i], p[j]):
                    raise ValueError("feature points must be pairwise distinct")
        if self.f_len == 0.0:
            raise ValueError("focal length must be nonzero")
        object.__setattr__(self, "features", p)

    def measure(self, xi, n=None, t: float = 0.0) -> np.ndarray:
        n = np.zeros(N_NOISE) if n is None else n
        return measure_batch(xi, n, self.features, self.f_len, t, self.spin_rate)[0]

    def pixels(self, xi, t: float = 0.0) -> np.ndarray:
        return self.measure(xi, None, t)[PIXEL_ROWS]

    def jacobians(self, xi_hat, t: float = 0.0):
        return measurement_jacobians(xi_hat, self, t)


def measure(xi, n, model: SensorModel, t: float = 0.0) -> np.ndarray:
    return model.measure(xi, n, t)


def measurement_jacobians(xi_hat, model: SensorModel, t: float = 0.0, step: float = FD_STEP):
    """H = dh/dxi and V = dh/dn at (xi_hat, n=0) by central differences.

    Steps scale with each channel's magnitude: ``step * max(1, |x_j|)``.
    """
    xi_hat = np.asarray(xi_hat, dtype=float)
    z = np.concatenate([xi_hat, np.zeros(N_NOISE)])
    h = step * np.maximum(1.0, np.abs(z))
    n_var = z.size
    pert = np.repeat(z[None, :], 2 * n_var, axis=0)
    idx = np.arange(n_var)
    pert[2 * idx, idx] += h
    pert[2 * idx + 1, idx] -= h
    vals = measure_batch(pert[:, :12], pert[:, 12:], model.features, model.f_len, t, model.spin_rate)
    J = (vals[0::2] - vals[1::2]).T / (2.0 * h)
    return J[:, :12], J[:, 12:]


def init_focal_length(xi_0, features, spin_rate: float = 0.0, t: float = 0.0) -> float:
    """Depth of the feature best aligned with the boresight (lowest index on ties)."""
    d_b = body_vectors(np.asarray(xi_0, dtype=float), features, t, spin_rate)[0]
    align = -d_b[:, 2] / np.linalg.norm(d_b, axis=1)
    best = align.max()
    if best <= 0.0:
        raise NoVisibleFeature("no feature in front of the camera")
    k = int(np.flatnonzero(align >= best - TIE_TOL)[0])
    return float(abs(d_b[k, 2]))
