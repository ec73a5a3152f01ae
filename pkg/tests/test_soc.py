import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disko.edmd import KoopmanModel, reconstruction_error, spectral_radius
from disko.snapshots import AccumulatorSet, SnapshotSet
from disko.soc import (SOCConfig, SOCState, compose, fit_stable,
                       initial_factors, project_contraction, project_factors,
                       project_nearest_stable, project_orthogonal, soc_gradients)


def _random_state(rng, ws, wu):
    S = np.eye(ws) + 0.3 * rng.normal(size=(ws, ws))
    O = project_orthogonal(rng.normal(size=(ws, ws)))
    C = project_contraction(rng.normal(size=(ws, ws)))
    return SOCState(S, O, C, rng.normal(size=(ws, wu)))


def _random_snap(rng, ws, wu, P=25):
    return SnapshotSet(rng.normal(size=(ws, P)), rng.normal(size=(ws, P)),
                       rng.normal(size=(wu, P)), 1.0)


def _objective(S, O, C, B, snap):
    return reconstruction_error(np.linalg.solve(S, O @ C @ S), B, snap)


def _fd_gradient(fun, M):
    g = np.zeros_like(M)
    for idx in np.ndindex(*M.shape):
        h = 1e-6 * max(1.0, abs(M[idx]))
        Mp, Mm = M.copy(), M.copy()
        Mp[idx] += h
        Mm[idx] -= h
        g[idx] = (fun(Mp) - fun(Mm)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(22))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ws, wu = 1 + seed % 8, seed % 3
    st_, snap = _random_state(rng, ws, wu), _random_snap(rng, ws, wu)
    gS, gO, gC, gB = soc_gradients(st_, snap.accumulators())
    S, O, C, B = st_.S, st_.O, st_.C, st_.B
    assert _rel(gS, _fd_gradient(lambda M: _objective(M, O, C, B, snap), S)) <= 1e-5
    assert _rel(gO, _fd_gradient(lambda M: _objective(S, M, C, B, snap), O)) <= 1e-5
    assert _rel(gC, _fd_gradient(lambda M: _objective(S, O, M, B, snap), C)) <= 1e-5
    if wu:
        assert _rel(gB, _fd_gradient(lambda M: _objective(S, O, C, M, snap), B)) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2), st.integers(0, 2**31))
def test_gradients_from_snapshots_and_accumulators_agree(ws, wu, seed):
    rng = np.random.default_rng(seed)
    s, snap = _random_state(rng, ws, wu), _random_snap(rng, ws, wu)
    gS, gO, gC, gB = soc_gradients(s, snap.accumulators())
    A = compose(s.S, s.O, s.C)
    R = snap.Y - A @ snap.X - s.B @ snap.U
    V = R @ snap.X.T
    Si = np.linalg.inv(s.S)
    for got, want in ((gS, Si.T @ (V @ A.T - A.T @ V)),
                      (gO, -Si.T @ V @ s.S.T @ s.C.T),
                      (gC, -s.O.T @ Si.T @ V @ s.S.T),
                      (gB, -R @ snap.U.T)):
        assert np.linalg.norm(got - want) <= 1e-10 * max(1.0, np.linalg.norm(want))


def test_zero_inputs_give_zero_B_gradient():
    rng = np.random.default_rng(0)
    s = _random_state(rng, 4, 2)
    acc = AccumulatorSet.from_matrices(rng.normal(size=(4, 20)), rng.normal(size=(4, 20)),
                                       np.zeros((2, 20)))
    s.B = np.zeros((4, 2))
    assert np.all(soc_gradients(s, acc)[3] == 0)


def test_stationary_at_generative_optimum():
    rng = np.random.default_rng(3)
    S = np.eye(4) + 0.2 * rng.normal(size=(4, 4))
    O = project_orthogonal(rng.normal(size=(4, 4)))
    C = np.diag([0.2, 0.5, 0.7, 0.9])
    A0 = compose(S, O, C)
    X = rng.normal(size=(4, 30))
    acc = AccumulatorSet.from_matrices(X, A0 @ X)
    grads = soc_gradients(SOCState(S, O, C, np.zeros((4, 0))), acc)
    for g in grads:
        assert np.linalg.norm(g) <= 1e-8


def test_projection_examples():
    np.testing.assert_allclose(project_orthogonal(2 * np.eye(3)), np.eye(3), atol=1e-15)
    O, C = project_factors(2 * np.eye(3), np.diag([1.5, -0.2, 0.3]), 1.0)
    np.testing.assert_allclose(C, np.diag([1.0, 0.0, 0.3]), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_projection_is_locally_nearest(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(4, 4))
    Cp = project_contraction(C, 0.8)
    d0 = np.linalg.norm(C - Cp)
    for _ in range(300):
        D = 1e-2 * rng.normal(size=(4, 4))
        cand = Cp + 0.5 * (D + D.T)
        w = np.linalg.eigvalsh(cand)
        if w.min() >= 0 and w.max() <= 0.8:
            assert np.linalg.norm(C - cand) >= d0 - 1e-12
    O = rng.normal(size=(4, 4))
    Op = project_orthogonal(O)
    for _ in range(100):
        K = 1e-2 * rng.normal(size=(4, 4))
        Q = Op @ project_orthogonal(np.eye(4) + (K - K.T))
        assert np.linalg.norm(O - Q) >= np.linalg.norm(O - Op) - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(0.1, 1.0), st.integers(0, 2**31))
def test_projection_invariants(n, rho, seed):
    rng = np.random.default_rng(seed)
    O, C = project_factors(rng.normal(size=(n, n)), 3 * rng.normal(size=(n, n)), rho)
    assert np.linalg.norm(O.T @ O - np.eye(n)) <= 1e-8
    assert np.max(np.abs(C - C.T)) <= 1e-12
    w = np.linalg.eigvalsh(C)
    assert w.min() >= -1e-10 and w.max() <= rho + 1e-10


def _scalar_oracle(x, y, rho):
    return float(np.clip(np.dot(x, y) / np.dot(x, x), -rho, rho))


def test_scalar_clamp_example():
    acc = AccumulatorSet.from_matrices(np.ones((1, 3)), 2 * np.ones((1, 3)))
    m, _ = fit_stable(acc, SOCConfig(max_iter=5000))
    assert abs(m.A[0, 0] - 1.0) <= 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    y = rng.normal(scale=2.0, size=20) * (1 if seed % 2 else -1) + 1.5 * x
    rho = (0.5, 0.9, 1.0)[seed % 3]
    acc = AccumulatorSet.from_matrices(x[None], y[None])
    m, _ = fit_stable(acc, SOCConfig(rho=rho, max_iter=5000))
    assert abs(m.A[0, 0] - _scalar_oracle(x, y, rho)) <= 1e-6


def test_generative_recovery():
    rng = np.random.default_rng(7)
    A0 = rng.normal(size=(4, 4))
    A0 *= 0.9 / spectral_radius(A0)
    X = rng.normal(size=(4, 50))
    acc = AccumulatorSet.from_matrices(X, A0 @ X)
    m, s = fit_stable(acc, SOCConfig(max_iter=5000))
    assert s.objective <= 1e-6
    assert np.linalg.norm(m.A - A0) <= 1e-3


def test_rho_bound_respected():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(3, 40))
    Y = 1.3 * X + 0.1 * rng.normal(size=(3, 40))
    acc = AccumulatorSet.from_matrices(X, Y)
    m, s = fit_stable(acc, SOCConfig(rho=0.9, max_iter=2000))
    assert m.spectral_radius <= 0.9 + 1e-8
    assert s.objective <= s.initial_objective


def _check_feasible(s, rho):
    n = s.S.shape[0]
    assert np.linalg.norm(s.O.T @ s.O - np.eye(n)) <= 1e-8
    assert np.max(np.abs(s.C - s.C.T)) <= 1e-12
    w = np.linalg.eigvalsh(s.C)
    assert w.min() >= -1e-10 and w.max() <= rho + 1e-10
    assert np.linalg.cond(s.S) <= 1e12
    assert spectral_radius(s.A) <= rho + 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2), st.floats(0.3, 1.0), st.integers(0, 2**31))
def test_descent_is_monotone_and_feasible(ws, wu, rho, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(ws, 30))
    U = rng.normal(size=(wu, 30))
    Y = 1.2 * X + rng.normal(size=(ws, wu)) @ U + 0.3 * rng.normal(size=(ws, 30))
    acc = AccumulatorSet.from_matrices(X, Y, U)
    buf = io.StringIO()
    m, s = fit_stable(acc, SOCConfig(rho=rho, max_iter=200), diagnostics=buf)
    h = np.array(s.history)
    assert np.all(np.diff(h) <= 0)
    _check_feasible(s, rho)
    rows = buf.getvalue().splitlines()
    assert rows[0] == "iter,objective,step,spectral_radius"
    for line in rows[1:]:
        assert float(line.split(",")[3]) <= rho + 1e-8


def test_restarts_are_deterministic():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(3, 20))
    acc = AccumulatorSet.from_matrices(X, 1.2 * X + 0.2 * rng.normal(size=(3, 20)))
    cfg = SOCConfig(max_iter=300, restarts=3, seed=9)
    a = fit_stable(acc, cfg)[0].A
    b = fit_stable(acc, cfg)[0].A
    np.testing.assert_array_equal(a, b)


def test_polar_initialization_is_feasible():
    A = np.array([[1.2, 0.3], [-0.4, 0.8]])
    S, O, C = initial_factors(A, SOCConfig(init="polar"))
    np.testing.assert_array_equal(S, np.eye(2))
    assert spectral_radius(compose(S, O, C)) <= 1 + 1e-12


def test_lyapunov_initialization_reproduces_stable_target():
    A = np.array([[0.5, 2.0], [0.0, 0.6]])
    S, O, C = initial_factors(A, SOCConfig())
    np.testing.assert_allclose(compose(S, O, C), A, atol=1e-10)


def test_config_validation():
    for kw in ({"rho": 0.0}, {"rho": 1.5}, {"max_iter": 0}, {"init": "x"}):
        with pytest.raises(ValueError):
            SOCConfig(**kw)


def test_nearest_stable_projection():
    K = np.array([[0.5, 0.3], [0.0, -0.4]])
    np.testing.assert_allclose(project_nearest_stable(K), K, atol=1e-8)
    assert abs(project_nearest_stable([[1.5]], SOCConfig(max_iter=5000))[0, 0] - 1.0) <= 1e-6


def test_init_model_respected():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2, 10))
    acc = AccumulatorSet.from_matrices(X, 0.5 * X)
    init = KoopmanModel(0.5 * np.eye(2), None, dt=0.1)
    m, s = fit_stable(acc, SOCConfig(max_iter=50), init=init)
    assert m.dt == 0.1 and s.objective <= 1e-20
