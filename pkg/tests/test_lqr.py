import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_discrete_are

from disko.basis import pendulum_lqr_dictionary
from disko.edmd import KoopmanModel, spectral_radius
from disko.lqr import (FeedbackLaw, LQRWeights, NotStabilizableError,
                       closed_loop_step, riccati_residual, solve_finite_lqr,
                       solve_infinite_lqr)
from disko.lyapunov import solve_discrete_lyapunov

GOLDEN = (1 + np.sqrt(5)) / 2
ONE = LQRWeights([[1.0]], [[1.0]])


def test_scalar_riccati_golden_ratio():
    law, P = solve_infinite_lqr([[1.0]], [[1.0]], ONE)
    assert abs(P[0, 0] - GOLDEN) <= 1e-8
    assert abs(law.gain()[0, 0] - 1 / GOLDEN) <= 1e-8


def test_unactuated_stable_system():
    A = np.array([[0.5, 0.2], [0.0, -0.3]])
    w = LQRWeights(np.eye(2), [[1.0]])
    law, P = solve_infinite_lqr(A, np.zeros((2, 1)), w)
    assert np.all(law.gain() == 0)
    np.testing.assert_allclose(P, solve_discrete_lyapunov(A, np.eye(2)), atol=1e-9)


def test_unstabilizable_reported():
    with pytest.raises(NotStabilizableError):
        solve_infinite_lqr([[1.5]], [[0.0]], ONE)


def test_weights_validation():
    with pytest.raises(ValueError):
        LQRWeights([[1.0, 2.0], [0.0, 1.0]], [[1.0]])
    with pytest.raises(ValueError):
        LQRWeights([[-1.0]], [[1.0]])
    with pytest.raises(ValueError):
        LQRWeights([[1.0]], [[0.0]])


def test_lifted_weights():
    w = LQRWeights.lifted([1.0, 2.0], [0.01], 8)
    assert w.Q.shape == (8, 8) and w.Q[1, 1] == 2.0 and w.Q[2:, 2:].sum() == 0
    assert w.R[0, 0] == 0.01


def test_finite_horizon_single_step():
    A, B = np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([[0.0], [1.0]])
    w = LQRWeights(np.eye(2), [[0.1]])
    assert np.all(solve_finite_lqr(A, B, w, 1).gain(0) == 0)
    K0 = solve_finite_lqr(A, B, w, 1, terminal=w.Q).gain(0)
    want = np.linalg.solve(w.R + B.T @ w.Q @ B, B.T @ w.Q @ A)
    np.testing.assert_allclose(K0, want, atol=1e-14)


def test_finite_horizon_converges_to_infinite():
    law = solve_finite_lqr([[1.0]], [[1.0]], ONE, 40)
    assert len(law.K) == 40
    assert abs(law.gain(0)[0, 0] - 1 / GOLDEN) <= 1e-6


def test_finite_horizon_without_actuation():
    law = solve_finite_lqr(np.eye(2), np.zeros((2, 1)), LQRWeights(np.eye(2), [[1.0]]), 7)
    assert all(np.all(k == 0) for k in law.K)


def _random_system(seed, n=4, m=2):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    M = rng.normal(size=(n, n))
    return A, B, LQRWeights(M @ M.T + 0.1 * np.eye(n), np.eye(m))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_infinite_lqr_against_scipy(seed):
    A, B, w = _random_system(seed)
    law, P = solve_infinite_lqr(A, B, w, max_iter=100000)
    P_ref = solve_discrete_are(A, B, w.Q, w.R)
    np.testing.assert_allclose(P, P_ref, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(P, P.T, atol=1e-8 * np.linalg.norm(P))
    assert np.linalg.eigvalsh(0.5 * (P + P.T)).min() >= -1e-8
    assert riccati_residual(A, B, w, P) <= 1e-8
    assert spectral_radius(A - B @ law.gain()) < 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_finite_gains_are_cauchy(seed):
    A, B, w = _random_system(seed, 3, 1)
    gains = [solve_finite_lqr(A, B, w, n).gain(0) for n in (50, 100, 200)]
    d1 = np.linalg.norm(gains[1] - gains[0])
    d2 = np.linalg.norm(gains[2] - gains[1])
    assert d2 <= d1 + 1e-9 * np.linalg.norm(gains[0])
    K_inf = solve_infinite_lqr(A, B, w, max_iter=100000)[0].gain()
    assert np.linalg.norm(gains[2] - K_inf) <= 1e-6 * max(1, np.linalg.norm(K_inf))


def test_closed_loop_step_examples():
    m = KoopmanModel([[1.0]], [[1.0]])
    law = FeedbackLaw(np.array([[1 / GOLDEN]]), np.array([0.5]))
    u, nxt = closed_loop_step(m, law, [0.5])
    assert u[0] == 0 and nxt[0] == 0.5
    u, _ = closed_loop_step(m, law, [1.5])
    assert abs(u[0] + 0.618) < 1e-3
    zero = FeedbackLaw(np.zeros((1, 1)), np.zeros(1))
    assert closed_loop_step(m, zero, [42.0])[0][0] == 0


def test_pendulum_lqr_closed_loop_is_stable():
    from disko.experiments import LyapunovConfig, design_pendulum_lqr
    design, law = design_pendulum_lqr(LyapunovConfig())
    assert spectral_radius(design.A - design.B @ law.gain()) < 1
    d = pendulum_lqr_dictionary(1)
    u, nxt = closed_loop_step(design, law, [0.0, 0.0], d)
    assert np.all(u == 0) and np.allclose(nxt, 0)
