import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from disko.basis import BasisDictionary
from disko.edmd import KoopmanModel
from disko.lyapunov import (LyapunovError, alpha_upper, certify_trajectory,
                            lyapunov_residual, solve_discrete_lyapunov,
                            solve_lyapunov, write_certificate_csv)


def _hurwitz(rng, n):
    M = rng.normal(size=(n, n))
    return M - (np.linalg.eigvals(M).real.max() + 0.5) * np.eye(n)


def test_continuous_examples():
    np.testing.assert_allclose(solve_lyapunov(-np.eye(3), np.eye(3)), 0.5 * np.eye(3))
    np.testing.assert_allclose(solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2)),
                               np.diag([0.5, 0.25]), atol=1e-15)


def test_continuous_against_quadrature():
    rng = np.random.default_rng(0)
    K = _hurwitz(rng, 5)
    Q = np.eye(5)
    P = solve_lyapunov(K, Q)
    T = 60.0 / 0.5
    P_ref, _ = quad_vec(lambda t: expm(K.T * t) @ Q @ expm(K * t), 0, T,
                        epsrel=1e-11, epsabs=1e-13)
    assert np.linalg.norm(P - P_ref) <= 1e-5 * np.linalg.norm(P_ref)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31))
def test_continuous_solution_properties(n, seed):
    rng = np.random.default_rng(seed)
    K = _hurwitz(rng, n)
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    P = solve_lyapunov(K, Q)
    assert lyapunov_residual(K, P, Q) <= 1e-8 * np.linalg.norm(Q)
    np.testing.assert_array_equal(P, P.T)
    assert np.linalg.eigvalsh(P).min() > 0
    assert alpha_upper(P, Q) > 0


def test_non_hurwitz_rejected():
    with pytest.raises(LyapunovError):
        solve_lyapunov(np.diag([-1.0, 0.0]), np.eye(2))
    with pytest.raises(LyapunovError):
        solve_discrete_lyapunov(np.diag([0.5, 1.0]), np.eye(2))


def test_discrete_examples():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_array_equal(solve_discrete_lyapunov(np.zeros((2, 2)), Q), Q)
    assert abs(solve_discrete_lyapunov([[0.5]], [[1.0]])[0, 0] - 4 / 3) <= 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_discrete_against_series(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.8 / np.abs(np.linalg.eigvals(A)).max()
    Q = np.eye(n)
    P = solve_discrete_lyapunov(A, Q)
    ref, term = np.zeros((n, n)), Q.copy()
    for _ in range(5000):
        ref += term
        term = A.T @ term @ A
        if np.linalg.norm(term) < 1e-18:
            break
    assert np.linalg.norm(P - ref) <= 1e-8 * np.linalg.norm(ref)
    assert lyapunov_residual(A, P, Q, discrete=True) <= 1e-8 * np.linalg.norm(Q)


def test_discrete_and_continuous_agree_as_dt_shrinks():
    rng = np.random.default_rng(3)
    K = _hurwitz(rng, 4)
    Q = np.eye(4)
    Pc = solve_lyapunov(K, Q)
    gaps = []
    for dt in (1e-2, 1e-3):
        Pd = solve_discrete_lyapunov(expm(K * dt), Q) * dt
        gaps.append(np.linalg.norm(Pd - Pc) / np.linalg.norm(Pc))
    assert gaps[1] < gaps[0] and gaps[1] < 1e-2


def _linear_trajectory(K, x0, dt, steps):
    A = expm(K * dt)
    xs = [np.asarray(x0, float)]
    for _ in range(steps):
        xs.append(A @ xs[-1])
    return A, np.array(xs)


@pytest.mark.parametrize("residual", ["forward", "hold"])
def test_linear_flow_is_certified(residual):
    K = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    dt = 1e-3
    A, xs = _linear_trajectory(K, [1.0, 0.5], dt, 400)
    cert = certify_trajectory(KoopmanModel(A, None, dt=dt), xs, residual=residual)
    assert cert.path == "continuous" and cert.estimator == residual
    assert cert.valid.all() and cert.valid_suffix == len(cert.valid)
    assert np.all(np.diff(cert.V) < 0)
    assert np.all(cert.dV[1:] <= 0)
    if residual == "hold":
        assert cert.eps_norm.max() <= 1e-10


def test_forward_estimator_bias_is_first_order():
    K = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    lows = []
    for dt in (1e-2, 5e-3):
        A, xs = _linear_trajectory(K, [1.0, 0.5], dt, 20)
        cert = certify_trajectory(KoopmanModel(A, None, dt=dt), xs)
        lows.append(cert.alpha_lower.max())
    assert 1.8 < lows[0] / lows[1] < 2.2


def test_discrete_path_linear_flow():
    K = np.array([[-1.0, 0.3], [0.0, -2.0]])
    A, xs = _linear_trajectory(K, [1.0, 1.0], 0.1, 30)
    cert = certify_trajectory(KoopmanModel(A, None, dt=0.1), xs, path="discrete")
    assert cert.path == "discrete" and cert.valid.all()
    assert cert.residual <= 1e-8


def test_constant_trajectory_two_term_dictionary():
    d = BasisDictionary.from_labels(["x0", "x0^2"], 1)
    xs = np.full((6, 1), 2.0)
    m = KoopmanModel(0.5 * np.eye(2), None, dt=0.1, dictionary=d)
    cert = certify_trajectory(m, xs, path="discrete")
    # eps = Psi - 0.5 Psi, so alpha_lower = 0.5; P = 4/3 I gives alpha_upper = 3/8
    np.testing.assert_allclose(cert.alpha_lower, 0.5)
    assert abs(cert.alpha_upper - 0.375) <= 1e-12
    assert not cert.valid.any()
    cert_c = certify_trajectory(m, xs)
    np.testing.assert_allclose(cert_c.alpha_lower, np.log(2) / 0.1)
    np.testing.assert_allclose(cert_c.eps_norm, cert_c.eps_norm[0])


def test_negative_eigenvalue_falls_back_to_discrete():
    m = KoopmanModel(np.diag([0.5, -0.3]), None, dt=0.1)
    xs = np.random.default_rng(0).normal(size=(5, 2))
    assert certify_trajectory(m, xs).path == "discrete"


def test_short_trajectory_rejected():
    with pytest.raises(ValueError):
        certify_trajectory(KoopmanModel(0.5 * np.eye(2), None), np.zeros((2, 2)))


def test_certificate_csv_summary():
    d = BasisDictionary.from_labels(["x0", "x1"], 2)
    K = np.array([[-1.0, 0.0], [0.0, -2.0]])
    A, xs = _linear_trajectory(K, [1.0, 1.0], 0.01, 50)
    cert = certify_trajectory(KoopmanModel(A, None, dt=0.01, dictionary=d), xs,
                              equilibria=[[0.0, 0.0]])
    buf = io.StringIO()
    write_certificate_csv(buf, cert)
    text = buf.getvalue()
    assert text.startswith("t,V,dV,eps_norm,psi_norm,alpha_lower,alpha_upper,valid")
    assert "# valid_suffix_samples = 50" in text
    assert "# equilibrium_consistent = True" in text
