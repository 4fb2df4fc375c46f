"""
Scenario files and reference construction.

A scenario is a JSON document; every physical quantity carries its unit in
the key name (``dt_s``, ``r0_ref_km``, ...).  Relative gravity-file paths are
resolved against the scenario's directory first, then the packaged data.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .errors import GimbalLock, GimbalProximity, ScenarioError
from .frames import GIMBAL_GUARD, AsteroidRotation, SpacecraftParams, rotation_i_to_a
from .gravity import EllipsoidField, GravityProvider, load_harmonic_field
from .mpc import MpcConfig

SCENARIO_DIR = "scenarios"
DATA_DIR = "data"
DEFAULT_DESCENT_RATE = 0.005
BUILTIN = ("leg1", "leg2")

_DEFAULTS: Dict[str, Any] = {
    "dt_s": 1.0,
    "descent_rate_km_s": DEFAULT_DESCENT_RATE,
    "plant_substeps": 4,
    "seed": 0,
    "transient_steps": 0,
    "sigma0_blocks": [1e-4, 1e-4, 1e-4, 1e-4],
    "noise": {"P_std": 0.001, "G_scale": 1e-5},
    "output_dir": "runs",
}

_REQUIRED = ("n_steps", "r0_ref_km", "rend_ref_km", "features_km", "spin_rate_rad_s",
             "inertia_diag", "gravity", "mpc")


def _package_path(*parts) -> Path:
    return Path(__file__).resolve().parent.joinpath(*parts)


def _blocks_to_diag(values, sizes) -> np.ndarray:
    if len(values) != len(sizes):
        raise ScenarioError(f"expected {len(sizes)} block values, got {len(values)}")
    return np.concatenate([np.full(n, float(v)) for v, n in zip(values, sizes)])


@dataclass
class ScenarioConfig:
    """Parsed scenario; ``raw`` keeps the document used for hashing."""

    raw: Dict[str, Any]
    base_dir: Path

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], base_dir: Union[str, Path, None] = None) -> "ScenarioConfig":
        merged = copy.deepcopy(_DEFAULTS)
        for key, value in doc.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = copy.deepcopy(value)
        cfg = cls(raw=merged, base_dir=Path(base_dir) if base_dir else _package_path(SCENARIO_DIR))
        cfg.validate()
        return cfg

    # -- plain fields ---------------------------------------------------------
    @property
    def name(self) -> str:
        return self.raw.get("name", "scenario")

    @property
    def dt(self) -> float:
        return float(self.raw["dt_s"])

    @property
    def n_steps(self) -> int:
        return int(self.raw["n_steps"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def transient_steps(self) -> int:
        return int(self.raw["transient_steps"])

    @property
    def descent_rate(self) -> float:
        return float(self.raw["descent_rate_km_s"])

    @property
    def r0_ref(self) -> np.ndarray:
        return np.array(self.raw["r0_ref_km"], dtype=float)

    @property
    def rend_ref(self) -> np.ndarray:
        return np.array(self.raw["rend_ref_km"], dtype=float)

    @property
    def features(self) -> np.ndarray:
        return np.array(self.raw["features_km"], dtype=float)

    @property
    def plant_substeps(self) -> int:
        return int(self.raw["plant_substeps"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def params(self) -> SpacecraftParams:
        return SpacecraftParams(np.diag(np.array(self.raw["inertia_diag"], dtype=float)))

    @property
    def rotation(self) -> AsteroidRotation:
        return AsteroidRotation(float(self.raw["spin_rate_rad_s"]))

    @property
    def P(self) -> np.ndarray:
        return np.eye(16) * float(self.raw["noise"]["P_std"]) ** 2

    @property
    def G(self) -> np.ndarray:
        return float(self.raw["noise"]["G_scale"]) * np.ones((12, 16))

    @property
    def sigma0(self) -> np.ndarray:
        return np.diag(_blocks_to_diag(self.raw["sigma0_blocks"], (3, 3, 3, 3)))

    # -- derived models --------------------------------------------------------
    def _resolve(self, name: str) -> Path:
        for candidate in (self.base_dir / name, _package_path(DATA_DIR, name), Path(name)):
            if candidate.exists():
                return candidate
        raise ScenarioError(f"gravity file {name!r} not found")

    def gravity_models(self):
        """(plant provider, control-model provider)."""
        g = self.raw["gravity"]
        policy = g.get("brillouin_policy", "error")
        field = load_harmonic_field(self._resolve(g["high_fidelity_file"]), policy=policy)
        plant = GravityProvider.from_harmonic(field)
        low = g.get("low_fidelity", {"kind": "harmonic", "cap_degree": 2})
        if low["kind"] == "harmonic":
            control = GravityProvider.from_harmonic(field, int(low.get("cap_degree", 2)))
        elif low["kind"] == "ellipsoid":
            a, b, c = low["semi_axes_km"]
            control = GravityProvider.from_ellipsoid(
                EllipsoidField(a, b, c, float(low.get("mu_km3_s2", field.mu))))
        else:
            raise ScenarioError(f"unknown low-fidelity kind {low['kind']!r}")
        return plant, control

    def mpc_config(self) -> MpcConfig:
        m = self.raw["mpc"]
        Q = np.diag(_blocks_to_diag(m["Q_blocks"], (3, 3, 3, 3)))
        R = np.diag(_blocks_to_diag(m["R_blocks"], (1, 1, 1, 3)))
        tube_Q = np.diag(_blocks_to_diag(m["tube_Q_blocks"], (3, 3, 3, 3))) if "tube_Q_blocks" in m else None
        tube_R = np.diag(_blocks_to_diag(m["tube_R_blocks"], (1, 1, 1, 3))) if "tube_R_blocks" in m else None
        bounds = {2: (float(m["z_cnstr_km"]), float(m.get("z_upper_km", 1e3)))}
        return MpcConfig(N=int(m["horizon"]), beta=float(m["beta"]), Q=Q, R=R, W=float(m["W"]),
                         s_fov=float(m["s_fov"]), m_trans=float(m["m_trans_km_s2"]),
                         m_rot=float(m["m_rot"]), state_bounds=bounds, tube_Q=tube_Q,
                         tube_R=tube_R, dof=m.get("dof"), W_l1=float(m.get("W_l1", 0.0)))

    def validate(self) -> None:
        missing = [k for k in _REQUIRED if k not in self.raw]
        if missing:
            raise ScenarioError(f"missing keys: {', '.join(missing)}")
        if not self.dt > 0.0:
            raise ScenarioError("dt_s must be positive")
        if self.n_steps < 1:
            raise ScenarioError("n_steps must be positive")
        if self.descent_rate <= 0.0:
            raise ScenarioError("descent_rate_km_s must be positive")
        if self.features.shape != (4, 3):
            raise ScenarioError("features_km must hold four 3-vectors")
        for key in ("r0_ref_km", "rend_ref_km"):
            if len(self.raw[key]) != 3:
                raise ScenarioError(f"{key} must be a 3-vector")
        m = self.raw["mpc"]
        for key in ("horizon", "beta", "Q_blocks", "R_blocks", "W", "s_fov", "z_cnstr_km",
                    "m_trans_km_s2", "m_rot"):
            if key not in m:
                raise ScenarioError(f"mpc.{key} missing")
        for key in ("s_fov", "m_trans_km_s2", "m_rot"):
            if not float(m[key]) > 0.0:
                raise ScenarioError(f"mpc.{key} must be positive")
        try:
            self.mpc_config()
            self.params
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        self._resolve(self.raw["gravity"]["high_fidelity_file"])

    def config_hash(self) -> str:
        """SHA-256 of the canonical document, excluding seed and output location."""
        doc = {k: v for k, v in self.raw.items() if k not in ("seed", "output_dir")}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **changes) -> "ScenarioConfig":
        doc = copy.deepcopy(self.raw)
        for key, value in changes.items():
            doc[key] = value
        return ScenarioConfig.from_dict(doc, self.base_dir)


def load_scenario(source: Union[str, Path]) -> ScenarioConfig:
    """Load a scenario file, or a packaged one by name (``leg1``, ``leg2``)."""
    path = Path(source)
    if not path.exists() and str(source) in BUILTIN:
        path = _package_path(SCENARIO_DIR, f"{source}.json")
    if not path.exists():
        raise ScenarioError(f"scenario {source!r} not found")
    with open(path) as fh:
        doc = json.load(fh)
    return ScenarioConfig.from_dict(doc, path.parent)


# --- references ---------------------------------------------------------------

def build_position_reference(r0, r_end, n_steps: int, dt: float,
                             descent_rate: float = DEFAULT_DESCENT_RATE) -> np.ndarray:
    """Constant-rate straight descent from ``r0`` to ``r_end``, then hover.

    Returns ``n_steps + 1`` positions.  The descent lasts
    ``ceil(|r_end - r0| / (rate dt))`` steps.
    """
    r0 = np.asarray(r0, dtype=float)
    delta = np.asarray(r_end, dtype=float) - r0
    dist = float(np.linalg.norm(delta))
    n_desc = int(math.ceil(dist / (descent_rate * dt) - 1e-12)) if dist > 0.0 else 0
    k = np.arange(n_steps + 1, dtype=float)
    frac = np.ones_like(k) if n_desc == 0 else np.minimum(k / n_desc, 1.0)
    return r0[None, :] + frac[:, None] * delta[None, :]


def euler_from_rotation(R, branch_seed=None) -> np.ndarray:
    """Angles (phi, theta, psi) with ``R = R_b2(phi) R_21(theta) R_1i(psi)``.

    theta is taken in (-pi/2, pi/2); phi and psi are shifted by multiples of
    2 pi to lie nearest ``branch_seed`` when one is supplied.
    """
    R = np.asarray(R, dtype=float)
    s = R[0, 2]
    if abs(s) >= 1.0 - 1e-9:
        raise GimbalLock("pitch at +-pi/2; roll and yaw are not separable")
    theta = math.asin(s)
    psi = math.atan2(-R[0, 1], R[0, 0])
    phi = math.atan2(-R[1, 2], R[2, 2])
    Theta = np.array([phi, theta, psi])
    if branch_seed is not None:
        seed = np.asarray(branch_seed, dtype=float)
        for i in (0, 2):
            Theta[i] += 2.0 * math.pi * round((seed[i] - Theta[i]) / (2.0 * math.pi))
    return Theta


def boresight_rotation(r_a, features) -> np.ndarray:
    """R_ba pointing body +z from the spacecraft at the features' centroid.

    Body x is the asteroid-fixed +x axis projected orthogonally to the
    boresight.
    """
    d_avg = np.mean(np.asarray(r_a, dtype=float)[None, :] - np.asarray(features, dtype=float), axis=0)
    norm = np.linalg.norm(d_avg)
    if norm == 0.0:
        raise ValueError("spacecraft at the features' centroid")
    z_b = -d_avg / norm
    x_b = np.array([1.0, 0.0, 0.0]) - z_b[0] * z_b
    if np.linalg.norm(x_b) < 1e-9:
        raise ValueError("boresight parallel to the asteroid x axis")
    x_b /= np.linalg.norm(x_b)
    y_b = np.cross(z_b, x_b)
    return np.vstack([x_b, y_b, z_b])


def attitude_reference(r_ref, features, t: float, spin_rate: float, branch_seed=None) -> np.ndarray:
    """Theta that centres the camera on the features' mean location at time ``t``."""
    R_ba = boresight_rotation(r_ref, features)
    R_bi = R_ba @ rotation_i_to_a(t, spin_rate).T
    Theta = euler_from_rotation(R_bi, branch_seed)
    if abs(Theta[1]) >= math.pi / 2 - GIMBAL_GUARD:
        raise GimbalProximity(f"reference pitch {Theta[1]:.6f} inside gimbal guard band")
    return Theta


@dataclass
class ReferenceTrajectory:
    t: np.ndarray
    xi: np.ndarray
    u: np.ndarray


def build_reference(config: ScenarioConfig, control_gravity: Optional[GravityProvider] = None) -> ReferenceTrajectory:
    """Full state reference ``[r_ref, 0, Theta_ref, 0]`` and the hover input
    that cancels control-model gravity and centrifugal acceleration."""
    n = config.n_steps
    dt = config.dt
    r_ref = build_position_reference(config.r0_ref, config.rend_ref, n, dt, config.descent_rate)
    spin = config.rotation.spin_rate
    if control_gravity is None:
        control_gravity = config.gravity_models()[1]
    Om = config.rotation.omega
    xi = np.zeros((n + 1, 12))
    u = np.zeros((n + 1, 6))
    seed = None
    for k in range(n + 1):
        t = k * dt
        Theta = attitude_reference(r_ref[k], config.features, t, spin, seed)
        seed = Theta
        xi[k, 0:3] = r_ref[k]
        xi[k, 6:9] = Theta
        acc = control_gravity(r_ref[k]) - np.cross(Om, np.cross(Om, r_ref[k]))
        u[k, 0:3] = -rotation_i_to_a(t, spin) @ acc
    return ReferenceTrajectory(t=np.arange(n + 1) * dt, xi=xi, u=u)
