import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from descent_gnc.errors import DomainError, NotStabilizable
from descent_gnc.mpc import input_box_rows
from descent_gnc.tube import (
    FOV,
    STATE,
    ConstraintSet,
    CovarianceLadder,
    chi2_inverse,
    covariance_rank,
    propagate_covariances,
    reduce_to_mpc_sets,
    solve_dare,
    spectral_radius,
    support_margin,
    synthesize_gain,
    tighten_all,
    tighten_input_row,
    tighten_output_row,
)

# chi-squared quantiles from standard tables
CHI2_95_1 = 3.841458820694124
CHI2_95_2 = 5.991464547107979
CHI2_95_12 = 21.02606981748307


@pytest.mark.parametrize("p, value", [(1, CHI2_95_1), (2, CHI2_95_2), (12, CHI2_95_12)])
def test_chi2_inverse_table(p, value):
    assert chi2_inverse(0.95, p) == pytest.approx(value, rel=1e-10)


def test_chi2_inverse_two_dof_closed_form():
    for beta in (0.5, 0.9, 0.99):
        assert chi2_inverse(beta, 2) == pytest.approx(-2.0 * np.log(1.0 - beta), rel=1e-10)


@pytest.mark.parametrize("beta, p", [(0.0, 2), (1.0, 2), (0.9, 0), (0.9, 1.5)])
def test_chi2_inverse_domain(beta, p):
    with pytest.raises(DomainError):
        chi2_inverse(beta, p)


def test_chi2_inverse_monotone():
    betas = np.linspace(0.05, 0.995, 30)
    vals = [chi2_inverse(float(b), 3) for b in betas]
    assert np.all(np.diff(vals) > 0)
    assert chi2_inverse(0.95, 2) < chi2_inverse(0.95, 3)


# --- gain -----------------------------------------------------------------------

def test_scalar_gain_closed_form():
    # x+ = x + u, q = r = 1: X = (1 + sqrt 5) / 2, K = -X / (1 + X)
    gain = synthesize_gain([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    X = (1 + np.sqrt(5)) / 2
    assert gain.P_riccati[0, 0] == pytest.approx(X, rel=1e-12)
    assert gain.K[0, 0] == pytest.approx(-X / (1 + X), rel=1e-12)
    assert gain.spectral_radius == pytest.approx(1 / (1 + X), rel=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_dare_matches_reference_solver(seed):
    rng = np.random.default_rng(seed)
    n, m = 5, 2
    A = rng.normal(size=(n, n)) / 1.5
    B = rng.normal(size=(n, m))
    Q = np.diag(rng.uniform(0.1, 2, n))
    R = np.diag(rng.uniform(0.1, 2, m))
    X = solve_dare(A, B, Q, R)
    X_ref = scipy.linalg.solve_discrete_are(A, B, Q, R)
    assert np.linalg.norm(X - X_ref) <= 1e-8 * np.linalg.norm(X_ref)
    assert synthesize_gain(A, B, Q, R).spectral_radius < 1.0


def test_unstabilizable_raises():
    A = np.diag([1.5, 0.5])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(NotStabilizable):
        synthesize_gain(A, B, np.eye(2), np.eye(1))


def test_zero_input_matrix_on_stable_system():
    gain = synthesize_gain(0.5 * np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(1))
    assert np.array_equal(gain.K, np.zeros((1, 2)))
    assert gain.spectral_radius == 0.5


def test_spectral_radius_rotation():
    c, s = np.cos(0.3), np.sin(0.3)
    assert spectral_radius(0.9 * np.array([[c, -s], [s, c]])) == pytest.approx(0.9, rel=1e-14)


def test_gain_schur_on_both_legs(leg1_setup, leg2_setup):
    for setup in (leg1_setup, leg2_setup):
        lin = setup.model.linearize(setup.xi0, setup.reference.u[0], 0.0)
        Qt, Rt = setup.mpc.gain_weights
        assert synthesize_gain(lin.A, lin.B, Qt, Rt).spectral_radius < 1.0


# --- covariance ladder -----------------------------------------------------------

def test_ladder_scalar_values():
    ladder = propagate_covariances([[0.5]], np.eye(1), 0.75 * np.eye(1), None, None, np.zeros((1, 1)), 60)
    assert ladder.Xi[1, 0, 0] == 0.75
    assert ladder.Xi[2, 0, 0] == 0.9375
    assert ladder.Xi[-1, 0, 0] == pytest.approx(1.0, abs=1e-15)
    assert ladder.horizon == 60
    assert ladder.Upsilon is None


def test_ladder_outputs(rng):
    Phi = 0.5 * np.eye(3)
    G = rng.normal(size=(3, 4))
    P = np.eye(4)
    H = rng.normal(size=(2, 3))
    V = rng.normal(size=(2, 4))
    ladder = propagate_covariances(Phi, G, P, H, V, np.eye(3), 4)
    for k in range(5):
        np.testing.assert_allclose(ladder.Upsilon[k], H @ ladder.Xi[k] @ H.T + V @ P @ V.T, rtol=1e-13)


def test_ladder_rejects_zero_horizon():
    with pytest.raises(ValueError):
        propagate_covariances(np.eye(1), np.eye(1), np.eye(1), None, None, np.zeros((1, 1)), 0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_ladder_monotone_from_zero(seed):
    rng = np.random.default_rng(seed)
    n = 4
    M = rng.normal(size=(n, n))
    Phi = 0.9 * M / spectral_radius(M)
    G = rng.normal(size=(n, 2))
    ladder = propagate_covariances(Phi, G, np.eye(2), None, None, np.zeros((n, n)), 30)
    for k in range(30):
        diff = ladder.Xi[k + 1] - ladder.Xi[k]
        assert np.linalg.eigvalsh(diff).min() >= -1e-12 * max(1.0, np.abs(ladder.Xi[k + 1]).max())


@pytest.mark.parametrize("setup_name", ["leg1_setup", "leg2_setup"])
def test_ladder_reaches_fixed_point(setup_name, request):
    setup = request.getfixturevalue(setup_name)
    lin = setup.model.linearize(setup.xi0, setup.reference.u[0], 0.0)
    Qt, Rt = setup.mpc.gain_weights
    gain = synthesize_gain(lin.A, lin.B, Qt, Rt)
    ladder = propagate_covariances(gain.Phi, lin.G, setup.config.P, None, None, setup.config.sigma0, 200)
    assert np.linalg.norm(ladder.Xi[200] - ladder.Xi[199], "fro") < 1e-8


# --- tightening -------------------------------------------------------------------

def test_margin_two_dof_closed_form():
    for sigma in (1e-3, 0.1, 2.0):
        C = sigma ** 2 * np.eye(2)
        m = support_margin([1.0, 0.0], C, 0.95)
        assert m == pytest.approx(sigma * np.sqrt(CHI2_95_2), abs=1e-9 * max(1, sigma))
    assert np.sqrt(CHI2_95_2) == pytest.approx(2.4478, abs=1e-4)


def test_margin_uses_rank():
    C = np.diag([4.0, 0.0])
    assert covariance_rank(C) == 1
    assert support_margin([1.0, 0.0], C, 0.95) == pytest.approx(2.0 * np.sqrt(CHI2_95_1), rel=1e-12)
    assert support_margin([1.0, 0.0], C, 0.95, dof=2) == pytest.approx(2.0 * np.sqrt(CHI2_95_2), rel=1e-12)


def test_margin_zero_covariance_and_orthogonal_direction():
    assert support_margin([1.0, 2.0], np.zeros((2, 2)), 0.95) == 0.0
    assert support_margin([0.0, 1.0], np.diag([1.0, 0.0]), 0.95) == 0.0


def test_margin_scales_with_direction(rng):
    C = np.cov(rng.normal(size=(3, 50)))
    eta = rng.normal(size=3)
    assert support_margin(3 * eta, C, 0.9) == pytest.approx(3 * support_margin(eta, C, 0.9), rel=1e-13)


def test_row_helpers_select_partition():
    Xi = np.array([np.diag([1.0, 4.0])])
    Ups = np.array([np.diag([9.0])])
    ladder = CovarianceLadder(Xi=Xi, Upsilon=Ups)
    row = np.array([1.0, 0.0, 1.0])
    assert tighten_output_row(row, FOV, ladder, 0, 0.95) == pytest.approx(3 * np.sqrt(CHI2_95_1))
    assert tighten_output_row(row, STATE, ladder, 0, 0.95) == pytest.approx(2 * np.sqrt(CHI2_95_2))
    with pytest.raises(ValueError):
        tighten_output_row(row, "other", ladder, 0, 0.95)
    K = np.array([[0.5, 0.0]])
    assert tighten_input_row([1.0], K, Xi[0], 0.95) == pytest.approx(0.5 * np.sqrt(CHI2_95_1))


def _simple_set():
    S = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    M, m = input_box_rows([2.0])
    return ConstraintSet(S=S, s=np.array([1.0, 1.0, 3.0, 2.0]), labels=[STATE] * 4, M=M, m=m, n_out=0)


def test_zero_covariance_is_bitwise_untightened():
    cset = _simple_set()
    ladder = propagate_covariances(np.eye(2), np.zeros((2, 2)), np.eye(2), None, None, np.zeros((2, 2)), 5)
    y_m, u_m = tighten_all(cset, ladder, np.ones((1, 2)), 0.95)
    assert not y_m.any() and not u_m.any()
    tight = reduce_to_mpc_sets(y_m, u_m, cset, None)
    assert np.array_equal(tight.u_bounds, cset.m)
    assert np.array_equal(tight.y_bounds, cset.s[tight.y_index])


def test_vectorized_tightening_matches_row_helpers(rng):
    cset = _simple_set()
    Phi = np.array([[0.9, 0.1], [0.0, 0.8]])
    ladder = propagate_covariances(Phi, np.eye(2), 0.01 * np.eye(2), None, None, 0.02 * np.eye(2), 6)
    K = rng.normal(size=(1, 2))
    y_m, u_m = tighten_all(cset, ladder, K, 0.95)
    for k in range(7):
        for i in range(4):
            assert y_m[k, i] == pytest.approx(tighten_output_row(cset.S[i], STATE, ladder, k, 0.95,
                                                                 n_out=0), rel=1e-12)
        for j in range(2):
            assert u_m[k, j] == pytest.approx(tighten_input_row(cset.M[j], K, ladder.Xi[k], 0.95), rel=1e-12)


def test_reduce_drops_duplicate_rows_and_tracks_worst_case():
    cset = _simple_set()
    y_m = np.array([[0.1, 0.1, 0.0, 0.0], [0.2, 0.3, 0.0, 0.5]])
    u_m = np.array([[0.0, 0.0], [0.5, 0.5]])
    tight = reduce_to_mpc_sets(y_m, u_m, cset, None)
    np.testing.assert_array_equal(tight.y_index, [0, 1, 3])
    np.testing.assert_allclose(tight.y_bounds, [0.8, 0.7, 1.5])
    np.testing.assert_allclose(tight.u_bounds, [1.5, 1.5])
    assert tight.max_at_horizon
    assert not tight.empty


def test_reduce_flags_empty_sets():
    cset = _simple_set()
    y_m = np.array([[1.5, 1.5, 0.0, 0.0]])
    tight = reduce_to_mpc_sets(y_m, np.zeros((1, 2)), cset, None)
    assert tight.empty and not tight.empty_inputs
    tight = reduce_to_mpc_sets(np.zeros((1, 4)), np.array([[2.5, 2.5]]), cset, None)
    assert tight.empty_inputs
    assert tight.u_bounds[0] + tight.u_bounds[1] == 0.0


def test_output_rows_map_through_H():
    H = np.array([[1.0, 2.0]])
    cset = ConstraintSet(S=np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]), s=np.ones(2),
                         labels=[FOV, STATE], M=np.zeros((0, 1)), m=np.zeros(0), n_out=1)
    np.testing.assert_array_equal(cset.state_rows(H), [[1.0, 2.0], [0.0, 1.0]])
