"""
Closed-loop simulation: plant, sensors, filter and tube MPC in one loop.

Per step ``k`` (time ``t = k dt``):

1. draw ``n_k ~ N(0, P)`` (one draw shared by measurement and process)
2. measure ``y_k = h(xi_k, n_k)``
3. filter: predict from ``t - dt`` and update with ``y_k``
4. MPC at the posterior estimate gives ``u_k``
5. plant: RK4 over ``dt`` with the high-fidelity field, plus ``G n_k``
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import DescentError
from .mpc import mpc_step
from .navigation import ControlModel, EstimateState, ekf_step
from .scenario import ScenarioConfig, build_reference
from .sensors import N_NOISE, SensorModel, init_focal_length
from .frames import rk4_step

EPS_ACTIVE = 1e-9


@dataclass
class StepRecord:
    k: int
    t: float
    xi_true: np.ndarray
    xi_hat: np.ndarray
    xi_ref: np.ndarray
    sigma_trace: float
    y: np.ndarray
    pixels: np.ndarray      # noise-free pixels of the true state
    pixels_ref: np.ndarray  # noise-free pixels of the reference state
    u: np.ndarray
    eps: float
    qp_status: str
    qp_iterations: int
    kkt_max: float
    spectral_radius: float
    margin_fov_max: float
    margin_z: float
    ladder_change: float
    saturated: bool
    tightened_empty: bool


@dataclass
class SimLog:
    header: Dict[str, object]
    records: List[StepRecord] = field(default_factory=list)
    solve_times: List[float] = field(default_factory=list)
    aborted: Optional[Dict[str, object]] = None

    def append(self, record: StepRecord, solve_time: float) -> None:
        self.records.append(record)
        self.solve_times.append(solve_time)

    def __len__(self) -> int:
        return len(self.records)

    def stack(self, name: str) -> np.ndarray:
        """Per-step values of one record field as an array."""
        return np.array([getattr(r, name) for r in self.records])

    def same_as(self, other: "SimLog") -> bool:
        """Bitwise equality of everything except wall-clock timing."""
        if self.header != other.header or self.aborted != other.aborted:
            return False
        if len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            for name in a.__dataclass_fields__:
                x, y = getattr(a, name), getattr(b, name)
                if isinstance(x, np.ndarray):
                    if x.shape != y.shape or x.tobytes() != y.tobytes():
                        return False
                elif x != y and not (x != x and y != y):
                    return False
        return True


@dataclass
class Setup:
    """Models and initial conditions derived from a scenario."""

    config: ScenarioConfig
    model: ControlModel
    plant_gravity: object
    reference: object
    mpc: object
    xi0: np.ndarray
    f_len: float


def prepare(config: ScenarioConfig) -> Setup:
    plant_g, control_g = config.gravity_models()
    ref = build_reference(config, control_g)
    xi0 = ref.xi[0].copy()
    f_len = init_focal_length(xi0, config.features, config.rotation.spin_rate, 0.0)
    sensors = SensorModel(config.features, f_len, config.rotation.spin_rate)
    model = ControlModel(params=config.params, rotation=config.rotation, gravity=control_g,
                         sensors=sensors, G=config.G, P=config.P, dt=config.dt)
    return Setup(config=config, model=model, plant_gravity=plant_g, reference=ref,
                 mpc=config.mpc_config(), xi0=xi0, f_len=f_len)


def _noise_factor(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def run_closed_loop(config: ScenarioConfig, seed: Optional[int] = None,
                    setup: Optional[Setup] = None) -> SimLog:
    """Simulate one scenario; failures stop the loop and fill ``aborted``."""
    seed = config.seed if seed is None else int(seed)
    setup = prepare(config) if setup is None else setup
    model, ref, mcfg = setup.model, setup.reference, setup.mpc
    rng = np.random.default_rng(seed)
    L_P = _noise_factor(config.P)
    L_0 = _noise_factor(config.sigma0)
    dt = config.dt
    z_idx = 2

    log = SimLog(header={
        "scenario": config.name,
        "config_hash": config.config_hash(),
        "seed": seed,
        "n_steps": config.n_steps,
        "dt_s": dt,
        "f_len": setup.f_len,
        "s_fov": mcfg.s_fov,
        "z_bounds_km": list(mcfg.state_bounds.get(z_idx, (None, None))),
        "transient_steps": config.transient_steps,
    })

    xi = setup.xi0.copy()
    est = EstimateState(xi + L_0 @ rng.standard_normal(12), config.sigma0)
    lin = None
    u = ref.u[0].copy()
    for k in range(config.n_steps):
        t = k * dt
        try:
            n = L_P @ rng.standard_normal(N_NOISE)
            y = model.sensors.measure(xi, n, t)
            pixels = model.sensors.pixels(xi, t)
            pixels_ref = model.sensors.pixels(ref.xi[k], t)
            est, lin = ekf_step(est, u, y, model, t, lin)
            tic = time.perf_counter()
            res = mpc_step(est, lin, ref.xi[k], model.sensors, mcfg, config.P)
            elapsed = time.perf_counter() - tic
        except DescentError as exc:
            log.aborted = {"step": k, "t": t, "error": type(exc).__name__, "message": str(exc)}
            break
        u = res.u
        sol = res.solution
        log.append(StepRecord(
            k=k, t=t, xi_true=xi.copy(), xi_hat=est.xi_hat.copy(), xi_ref=ref.xi[k].copy(),
            sigma_trace=float(np.trace(est.Sigma)), y=y, pixels=pixels,
            pixels_ref=pixels_ref, u=u.copy(),
            eps=res.eps, qp_status=sol.status, qp_iterations=sol.iterations,
            kkt_max=sol.kkt_max, spectral_radius=res.spectral_radius,
            margin_fov_max=res.margins_fov_max,
            margin_z=float(np.max(res.margins_state)) if res.margins_state.size else 0.0,
            ladder_change=res.ladder_change, saturated=res.saturated,
            tightened_empty=res.tightened.empty), elapsed)
        if sol.status != "optimal":
            log.aborted = {"step": k, "t": t, "error": "QpFailure", "message": sol.status}
            break
        try:
            xi = rk4_step(xi, u, dt, setup.plant_gravity, config.params, config.rotation, t,
                          substeps=config.plant_substeps) + config.G @ n
        except DescentError as exc:
            log.aborted = {"step": k + 1, "t": t + dt, "error": type(exc).__name__,
                           "message": str(exc)}
            break
    return log


# --- statistics -----------------------------------------------------------------

def violation_flags(log: SimLog) -> Dict[str, np.ndarray]:
    """Per-step boolean violation flags of the untightened constraints."""
    s_fov = float(log.header["s_fov"])
    lower, upper = log.header["z_bounds_km"]
    n = len(log)
    flags: Dict[str, np.ndarray] = {}
    pix = log.stack("pixels").reshape(n, -1) if n else np.zeros((0, 8))
    for j in range(pix.shape[1]):
        axis = "xy"[j % 2]
        flags[f"pixel_{j // 2 + 1}{axis}"] = np.abs(pix[:, j]) > s_fov
    z = log.stack("xi_true")[:, 2] if n else np.zeros(0)
    if lower is not None:
        flags["z_lower"] = z < lower
        flags["z_upper"] = z > upper
    return flags


def summarize(log: SimLog) -> Dict[str, object]:
    eps = log.stack("eps") if len(log) else np.zeros(0)
    flags = violation_flags(log)
    transient = int(log.header.get("transient_steps", 0))
    err = (log.stack("xi_true")[:, :3] - log.stack("xi_ref")[:, :3]) if len(log) else np.zeros((0, 3))
    return {
        "config_hash": log.header["config_hash"],
        "seed": log.header["seed"],
        "steps": len(log),
        "aborted": log.aborted,
        "violations": {k: int(v.sum()) for k, v in flags.items()},
        "violations_after_transient": {k: int(v[transient:].sum()) for k, v in flags.items()},
        "eps_active_steps": int(np.sum(eps > EPS_ACTIVE)),
        "min_z_km": float(log.stack("xi_true")[:, 2].min()) if len(log) else None,
        "rms_position_error_km": float(np.sqrt(np.mean(np.sum(err ** 2, axis=1)))) if len(log) else None,
        "total_solve_time_s": float(np.sum(log.solve_times)),
    }


@dataclass
class MonteCarloStats:
    n_runs: int
    seeds: List[int]
    violation_rate: Dict[str, np.ndarray]   # per step
    rms_position_error: np.ndarray          # per step, across runs
    eps_activation_rate: float
    aborted_runs: int
    logs: List[SimLog] = field(default_factory=list, repr=False)


def aggregate(logs: List[SimLog]) -> MonteCarloStats:
    """Order-independent statistics over completed steps of a batch of runs."""
    if not logs:
        raise ValueError("no runs to aggregate")
    n_steps = max(int(log.header["n_steps"]) for log in logs)
    counts = np.zeros(n_steps)
    viol: Dict[str, np.ndarray] = {}
    sq = np.zeros(n_steps)
    eps_on = 0
    total = 0
    for log in logs:
        n = len(log)
        counts[:n] += 1
        for name, f in violation_flags(log).items():
            viol.setdefault(name, np.zeros(n_steps))[:n] += f
        if n:
            d = log.stack("xi_true")[:, :3] - log.stack("xi_ref")[:, :3]
            sq[:n] += np.sum(d ** 2, axis=1)
            eps_on += int(np.sum(log.stack("eps") > EPS_ACTIVE))
        total += n
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = {k: np.where(counts > 0, v / counts, np.nan) for k, v in viol.items()}
        rms = np.where(counts > 0, np.sqrt(sq / counts), np.nan)
    return MonteCarloStats(
        n_runs=len(logs), seeds=sorted(int(log.header["seed"]) for log in logs),
        violation_rate=rate, rms_position_error=rms,
        eps_activation_rate=eps_on / total if total else 0.0,
        aborted_runs=sum(log.aborted is not None for log in logs), logs=list(logs))


def run_monte_carlo(config: ScenarioConfig, n_runs: int, base_seed: Optional[int] = None,
                    keep_logs: bool = True) -> MonteCarloStats:
    """Runs with seeds ``base_seed + i``; models are built once and shared."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    base = config.seed if base_seed is None else int(base_seed)
    setup = prepare(config)
    logs = [run_closed_loop(config, base + i, setup) for i in range(n_runs)]
    stats = aggregate(logs)
    if not keep_logs:
        stats.logs = []
    return stats
