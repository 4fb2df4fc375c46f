"""
End-to-end acceptance checks.  Each test prints one ``criterion N: PASS|FAIL``
line (visible under ``pytest -v``) and then asserts the same condition.
"""

import time

import numpy as np
import pytest

from descent_gnc.frames import linearize_dynamics, plant_derivative
from descent_gnc.gravity import (
    EllipsoidField,
    ellipsoid_acceleration,
    ellipsoid_potential,
    harmonic_acceleration,
    harmonic_potential,
    synthetic_field,
)
from descent_gnc.logs import SUMMARY_FILE, TIMING_FILE, emit_logs
from descent_gnc.navigation import EstimateState, ekf_predict, ekf_update
from descent_gnc.qp import solve_qp
from descent_gnc.scenario import load_scenario
from descent_gnc.sensors import N_NOISE
from descent_gnc.simulation import run_closed_loop, summarize
from descent_gnc.testbeds import ScalarTestbed, nees_testbed
from descent_gnc.tube import (
    STATE,
    ConstraintSet,
    propagate_covariances,
    reduce_to_mpc_sets,
    support_margin,
    synthesize_gain,
    tighten_all,
)

from conftest import MU
from test_gravity import exterior_points, fd_gradient, volume_quadrature
from test_navigation import textbook_kf
from test_qp import dual_oracle, random_problem

CHI2_95_2 = 5.991464547107979


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report


def central_jacobian(f, x, h):
    cols = []
    for j in range(x.size):
        d = np.zeros_like(x)
        d[j] = h * max(1.0, abs(x[j]))
        cols.append((f(x + d) - f(x - d)) / (2 * d[j]))
    return np.column_stack(cols)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def sample_steps(log, count=50):
    return np.unique(np.linspace(1, len(log) - 1, count).astype(int))


# 1 -------------------------------------------------------------------------------

def test_criterion_1_jacobians(leg1_setup, leg2_setup, leg1_log, leg2_log, report):
    worst = 0.0
    counts = []
    for setup, log in ((leg1_setup, leg1_log), (leg2_setup, leg2_log)):
        m = setup.model
        xs, us = log.stack("xi_hat"), log.stack("u")
        steps = sample_steps(log, 60)
        counts.append(len(steps))
        for k in steps:
            xi, u, t = xs[k], us[k - 1], float(log.records[k].t)
            lin = m.linearize(xi, u, t)
            A_c, B_c = linearize_dynamics(xi, u, m.gravity, m.params, m.rotation, t)
            f_x = lambda x: plant_derivative(x, u, m.gravity, m.params, m.rotation, t)
            f_u = lambda v: plant_derivative(xi, v, m.gravity, m.params, m.rotation, t)
            h_x = lambda x: m.sensors.measure(x, None, t)
            h_n = lambda n: m.sensors.measure(xi, n, t)
            worst = max(worst,
                        rel(A_c, central_jacobian(f_x, xi, 1e-6)),
                        rel(B_c, central_jacobian(f_u, u, 1e-6)),
                        rel(lin.H, central_jacobian(h_x, xi, 1e-6)),
                        rel(lin.V, central_jacobian(h_n, np.zeros(N_NOISE), 1e-6)))
    ok = min(counts) >= 50 and worst < 1e-5
    assert report(1, ok, f"max relative Jacobian error {worst:.2e} over {counts} states per leg")


# 2 -------------------------------------------------------------------------------

def test_criterion_2_schur(leg1_log, leg2_log, report):
    rho = np.concatenate([leg1_log.stack("spectral_radius"), leg2_log.stack("spectral_radius")])
    complete = leg1_log.aborted is None and leg2_log.aborted is None
    ok = complete and bool(np.all(rho < 1.0))
    assert report(2, ok, f"max spectral radius {rho.max():.6f} over {rho.size} steps")


# 3 -------------------------------------------------------------------------------

def test_criterion_3_ladder(leg1_setup, leg2_setup, leg1_log, leg2_log, report):
    worst_change, worst_drop = 0.0, 0.0
    for setup, log in ((leg1_setup, leg1_log), (leg2_setup, leg2_log)):
        m = setup.model
        xs, us = log.stack("xi_hat"), log.stack("u")
        Qt, Rt = setup.mpc.gain_weights
        for k in sample_steps(log, 10):
            lin = m.linearize(xs[k], us[k - 1], float(log.records[k].t))
            Phi = synthesize_gain(lin.A, lin.B, Qt, Rt).Phi
            ladder = propagate_covariances(Phi, lin.G, setup.config.P, None, None,
                                           setup.config.sigma0, 200)
            worst_change = max(worst_change, np.linalg.norm(ladder.Xi[200] - ladder.Xi[199], "fro"))
            zero = propagate_covariances(Phi, lin.G, setup.config.P, None, None, np.zeros((12, 12)), 200)
            for j in range(200):
                d = np.linalg.eigvalsh(zero.Xi[j + 1] - zero.Xi[j]).min()
                worst_drop = min(worst_drop, d / max(1e-300, np.abs(zero.Xi[j + 1]).max()))
    ok = worst_change < 1e-8 and worst_drop > -1e-10
    assert report(3, ok, f"|dXi|_F at k=200 {worst_change:.2e}; min relative eigenvalue of "
                         f"Xi(k+1)-Xi(k) from zero {worst_drop:.1e}")


# 4 -------------------------------------------------------------------------------

def test_criterion_4_tightening(report):
    worst = 0.0
    for sigma in (1e-4, 1e-2, 0.5, 3.0):
        for diag in ([1.0, 1.0], [1.0, 4.0]):
            C = sigma ** 2 * np.diag(diag)
            m = support_margin([1.0, 0.0], C, 0.95)
            worst = max(worst, abs(m - sigma * np.sqrt(CHI2_95_2)))
            m = support_margin([0.0, 1.0], C, 0.95)
            worst = max(worst, abs(m - sigma * np.sqrt(diag[1]) * np.sqrt(CHI2_95_2)))
    S = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    cset = ConstraintSet(S=S, s=np.array([1.0, 2.0, 3.0]), labels=[STATE] * 3,
                         M=np.array([[1.0], [-1.0]]), m=np.array([0.5, 0.5]), n_out=0)
    ladder = propagate_covariances(np.eye(2), np.zeros((2, 2)), np.eye(2), None, None,
                                   np.zeros((2, 2)), 10)
    y_m, u_m = tighten_all(cset, ladder, np.ones((1, 2)), 0.95)
    tight = reduce_to_mpc_sets(y_m, u_m, cset, None)
    bitwise = (tight.y_bounds.tobytes() == cset.s.tobytes()
               and tight.u_bounds.tobytes() == cset.m.tobytes())
    ok = worst <= 1e-9 and bitwise
    assert report(4, ok, f"max margin error {worst:.1e}; zero covariance untightened bitwise: {bitwise}")


# 5 -------------------------------------------------------------------------------

def test_criterion_5_calibration(report):
    tic = time.perf_counter()
    bed = ScalarTestbed()
    rates = bed.violation_rates(n_runs=10_000, n_steps=12, seed=0)
    elapsed = time.perf_counter() - tic
    ok = bool(np.all(rates <= 0.06)) and elapsed < 300.0
    assert report(5, ok, f"max per-step violation rate {rates.max():.4f} (bound 0.06), "
                         f"{elapsed:.0f} s for 10000 runs")


# 6 -------------------------------------------------------------------------------

def test_criterion_6_qp(leg1_log, leg2_log, report):
    worst_gap = 0.0
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        qp = random_problem(rng, 10, 5)
        z_ref = dual_oracle(qp.hessian, qp.gradient, qp.A, qp.b)
        gap = abs(qp.objective(solve_qp(qp).z) - qp.objective(z_ref))
        worst_gap = max(worst_gap, gap / max(1.0, abs(qp.objective(z_ref))))
    kkt = np.concatenate([leg1_log.stack("kkt_max"), leg2_log.stack("kkt_max")])
    ok = worst_gap < 1e-6 and bool(np.all(kkt < 1e-6))
    assert report(6, ok, f"max objective gap {worst_gap:.1e} over 100 QPs; max KKT residual "
                         f"{kkt.max():.1e} over {kkt.size} MPC steps")


# 7 -------------------------------------------------------------------------------

def test_criterion_7_ekf(report):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(4, 4)) / 2
        C = rng.normal(size=(2, 4))
        G = np.hstack([rng.normal(size=(4, 3)), np.zeros((4, 2))])
        V = np.hstack([np.zeros((2, 3)), np.eye(2)])
        P = np.diag(rng.uniform(0.1, 1.0, 5))
        x, S = rng.normal(size=4), np.eye(4)
        est = EstimateState(x.copy(), S.copy())
        for _ in range(10):
            y = rng.normal(size=2)
            x, S = textbook_kf(x, S, A, G @ P @ G.T, C, V @ P @ V.T, y)
            est = ekf_predict(est, A, G, P, lambda v: A @ v)
            est = ekf_update(est, y, C, V, P, C @ est.xi_hat)
            worst = max(worst, np.abs(est.xi_hat - x).max() / max(1.0, np.abs(x).max()),
                        np.abs(est.Sigma - S).max() / np.abs(S).max())
    nees = nees_testbed(n_runs=200, n_steps=100, seed=0)
    ok = worst < 1e-12 and nees.fraction_inside >= 0.90
    assert report(7, ok, f"linear-KF deviation {worst:.1e}; NEES inside 95% bounds on "
                         f"{100 * nees.fraction_inside:.0f}% of steps")


# 8 -------------------------------------------------------------------------------

def test_criterion_8_gravity(report):
    rng = np.random.default_rng(8)
    body = EllipsoidField(5.5, 4.6, 4.2, MU)
    field = synthetic_field(MU, 5.5, body, degree=8, scale=0.02, seed=0)
    exact = True
    for r in exterior_points(rng, 20):
        rn = np.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        exact &= harmonic_potential(r, field, 0) == MU / rn
        exact &= np.array_equal(harmonic_acceleration(r, field, 0), -MU / rn ** 3 * r)
    fd = max(rel(harmonic_acceleration(r, field), fd_gradient(lambda p: harmonic_potential(p, field), r))
             for r in exterior_points(rng, 50))
    fd = max(fd, max(rel(ellipsoid_acceleration(r, body), fd_gradient(lambda p: ellipsoid_potential(p, body), r))
                     for r in exterior_points(rng, 20, rmin=6.0, rmax=15.0)))
    sphere = EllipsoidField(3.0, 3.0, 3.0, MU)
    sph = max(rel(ellipsoid_acceleration(r, sphere), -MU * r / np.linalg.norm(r) ** 3)
              for r in exterior_points(rng, 20, rmin=3.5, rmax=30.0))
    pts = exterior_points(rng, 5, rmin=9.0, rmax=20.0)
    quad = max(rel(ellipsoid_acceleration(p, body), q) for p, q in zip(pts, volume_quadrature(pts, body)))
    ok = bool(exact) and fd < 1e-6 and sph < 1e-9 and quad < 1e-5
    assert report(8, ok, f"degree-0 exact: {bool(exact)}; gradient FD {fd:.1e}; spherical limit "
                         f"{sph:.1e}; volume quadrature {quad:.1e}")


# 9 -------------------------------------------------------------------------------

def test_criterion_9_scenario(report):
    tic = time.perf_counter()
    leg2_cfg = load_scenario("leg2")
    leg2 = run_closed_loop(leg2_cfg)
    leg1 = run_closed_loop(load_scenario("leg1"))
    elapsed = time.perf_counter() - tic

    m = leg2_cfg.mpc_config()
    table = (m.beta, m.N, leg2_cfg.dt, m.s_fov, m.state_bounds[2][0], m.m_trans) == \
        (0.95, 20, 1.0, 0.3, 5.61, 0.002)
    s = summarize(leg2)
    transient = leg2_cfg.transient_steps
    pix = np.abs(leg2.stack("pixels")[transient:]).max()
    eps_zero = float(np.mean(leg2.stack("eps") == 0.0))
    ok = (table and leg2.aborted is None and leg1.aborted is None and s["min_z_km"] >= 5.61
          and pix <= 0.3 and eps_zero >= 0.95 and elapsed < 60.0)
    assert report(9, ok, f"min z {s['min_z_km']:.4f} km; max |pixel| after {transient} steps "
                         f"{pix:.3f}; eps = 0 on {100 * eps_zero:.0f}% of steps; "
                         f"two legs in {elapsed:.1f} s")


# 10 ------------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path, report):
    cfg = load_scenario("leg2")
    a, b = run_closed_loop(cfg, seed=11), run_closed_loop(cfg, seed=11)
    same_log = a.same_as(b)
    emit_logs(a, tmp_path / "a")
    emit_logs(b, tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name not in (TIMING_FILE, SUMMARY_FILE))
    same_files = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    ok = same_log and same_files
    assert report(10, ok, f"identical records: {same_log}; identical bytes in {len(files)} log files: "
                          f"{same_files}")
