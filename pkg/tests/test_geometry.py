import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svikit.errors import NonSkewInput, OutOfDomain
from svikit.geometry import (
    Retraction,
    axis_angle,
    dtau_inv,
    dtau_inv_dual,
    hat,
    is_rotation,
    orthonormalize,
    tau,
    tau_inv,
    vee,
)

KINDS = [Retraction.EXPONENTIAL, Retraction.CAYLEY]

vec3 = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_hat_examples():
    np.testing.assert_array_equal(hat([1, 0, 0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    np.testing.assert_array_equal(hat([0, 0, 0]), np.zeros((3, 3)))
    M = hat([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(M, -M.T)
    np.testing.assert_array_equal(vee(M), [1, 2, 3])


def test_vee_examples():
    np.testing.assert_array_equal(vee(np.zeros((3, 3))), [0, 0, 0])
    with pytest.raises(NonSkewInput):
        vee(np.eye(3))
    S = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    with pytest.raises(NonSkewInput):
        vee(S)


@given(vec3, vec3)
def test_hat_is_cross(v, w):
    np.testing.assert_allclose(hat(v) @ w, np.cross(v, w), atol=1e-14)


@given(vec3)
def test_hat_vee_round_trip(v):
    np.testing.assert_array_equal(vee(hat(v)), v)


@pytest.mark.parametrize("kind", KINDS)
def test_tau_at_zero_is_identity(kind):
    np.testing.assert_array_equal(tau(kind, np.zeros(3)), np.eye(3))


def test_exp_half_turn_about_x():
    np.testing.assert_allclose(tau("exponential", [np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)


def test_exp_matches_rodrigues_by_matrix_series():
    # independent oracle: truncated power series of the matrix exponential
    xi = np.array([0.4, -0.7, 1.1])
    X = hat(xi)
    E, term = np.eye(3), np.eye(3)
    for k in range(1, 40):
        term = term @ X / k
        E = E + term
    np.testing.assert_allclose(tau("exponential", xi), E, atol=1e-14)


def test_cayley_matches_matrix_formula():
    xi = np.array([0.4, -0.7, 1.1])
    X = hat(xi)
    C = np.linalg.solve(np.eye(3) - X / 2, np.eye(3) + X / 2)
    np.testing.assert_allclose(tau("cayley", xi), C, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@given(st.lists(st.floats(-10.0, 10.0, allow_nan=False), min_size=3, max_size=3).map(np.array))
def test_tau_is_rotation(kind, xi):
    R = tau(kind, xi)
    assert np.linalg.norm(R @ R.T - np.eye(3)) <= 1e-12
    assert abs(np.linalg.det(R) - 1.0) <= 1e-10
    np.testing.assert_allclose(tau(kind, -xi), R.T, atol=1e-12)


def test_retractions_agree_to_second_order():
    xi = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    diffs = []
    for s in (1e-1, 5e-2, 2.5e-2, 1.25e-2):
        diffs.append(np.linalg.norm(tau("cayley", s * xi) - tau("exponential", s * xi)))
    orders = np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))
    assert np.all(orders >= 2.9)
    # at |xi| = 1e-3 both match I + X + X^2/2 up to third order
    x = 1e-3 * xi
    X = hat(x)
    series = np.eye(3) + X + X @ X / 2
    for kind in KINDS:
        assert np.linalg.norm(tau(kind, x) - series) < 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_tau_inv_examples(kind):
    np.testing.assert_array_equal(tau_inv(kind, np.eye(3)), np.zeros(3))
    xi = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(tau_inv(kind, tau(kind, xi)), xi, atol=1e-12)


def test_exp_inverse_refuses_cut_locus():
    R = axis_angle([0.3, -0.2, 0.9], np.pi - 1e-12)
    with pytest.raises(OutOfDomain):
        tau_inv("exponential", R)


def test_cayley_inverse_refuses_half_turn():
    with pytest.raises(OutOfDomain):
        tau_inv("cayley", np.diag([1.0, -1.0, -1.0]))


@given(vec3)
@settings(max_examples=200)
def test_tau_inv_round_trip(xi):
    for kind in KINDS:
        if kind is Retraction.EXPONENTIAL and np.linalg.norm(xi) >= np.pi - 1e-3:
            continue
        np.testing.assert_allclose(tau_inv(kind, tau(kind, xi)), xi, atol=1e-9)
        R = tau(kind, xi)
        np.testing.assert_allclose(tau(kind, tau_inv(kind, R)), R, atol=1e-10)


def test_exp_inverse_near_half_turn():
    axis = np.array([0.3, -0.2, 0.9]) / np.linalg.norm([0.3, -0.2, 0.9])
    for ang in (np.pi - 1e-3, np.pi - 1e-6, 3.0):
        np.testing.assert_allclose(tau_inv("exponential", axis_angle(axis, ang)), ang * axis, atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_dtau_inv_dual_identity_at_zero(kind):
    np.testing.assert_array_equal(dtau_inv_dual(kind, np.zeros(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def _fd_dtau_inv(kind, xi, y, eps=1e-6):
    # d/dt tau^{-1}(tau(t y) tau(xi)) at t = 0, central differences
    R = tau(kind, xi)
    plus = tau_inv(kind, tau(kind, eps * y) @ R)
    minus = tau_inv(kind, tau(kind, -eps * y) @ R)
    return (plus - minus) / (2 * eps)


@pytest.mark.parametrize("kind", KINDS)
def test_dtau_inv_dual_against_finite_differences(kind):
    rng = np.random.default_rng(11)
    for _ in range(50):
        xi = rng.standard_normal(3)
        xi *= rng.uniform(0, 1) / np.linalg.norm(xi)
        mu = rng.standard_normal(3)
        D = np.column_stack([_fd_dtau_inv(kind, xi, e) for e in np.eye(3)])
        np.testing.assert_allclose(dtau_inv_dual(kind, xi, mu), D.T @ mu, atol=1e-6)


def test_dexp_inv_against_bernoulli_series():
    rng = np.random.default_rng(3)
    xi = rng.standard_normal(3)
    xi *= 0.1 / np.linalg.norm(xi)
    ad = hat(xi)
    # B_n / n! coefficients of x / (e^x - 1) in ad_{-xi}, written with ad_xi
    series = np.eye(3) - ad / 2 + ad @ ad / 12 - np.linalg.matrix_power(ad, 4) / 720 \
        + np.linalg.matrix_power(ad, 6) / 30240
    np.testing.assert_allclose(dtau_inv("exponential", xi), series, atol=1e-10)
    mu = rng.standard_normal(3)
    np.testing.assert_allclose(dtau_inv_dual("exponential", xi, mu), series.T @ mu, atol=1e-10)


def test_dexp_inv_series_branch_is_continuous():
    d = np.array([0.6, 0.0, 0.8])
    mu = np.array([1.0, -2.0, 0.5])
    for s in (0.99e-4, 1.01e-4, 1e-3):
        ad = hat(s * d)
        series = np.eye(3) - ad / 2 + ad @ ad / 12
        np.testing.assert_allclose(dtau_inv_dual("exponential", s * d, mu), series.T @ mu, rtol=0, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_dtau_inv_dual_is_linear(kind):
    rng = np.random.default_rng(5)
    for _ in range(100):
        xi, a, b = rng.standard_normal((3, 3))
        s, t = rng.standard_normal(2)
        lhs = dtau_inv_dual(kind, xi, s * a + t * b)
        rhs = s * dtau_inv_dual(kind, xi, a) + t * dtau_inv_dual(kind, xi, b)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_orthonormalize_restores_rotation():
    R = axis_angle([1.0, 2.0, 3.0], 0.7)
    noisy = R + 1e-6 * np.random.default_rng(0).standard_normal((3, 3))
    Q = orthonormalize(noisy)
    assert is_rotation(Q, 1e-12)
    assert np.linalg.norm(Q - R) < 1e-5


def test_is_rotation_rejects_reflection():
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))
